//! Annotated NER corpora: domain types, validation, and the two on-disk formats.
//!
//! Entities are lists of inclusive, 0-based token spans plus a type label, which covers
//! flat, nested and discontinuous mentions with one representation:
//!
//! ```text
//! The cancer patient has constant stomach discomfort and pain
//!  0    1      2     3     4        5        6        7   8
//! stomach … pain  =>  spans [[5,5],[8,8]], type DISORDER
//! ```
//!
//! Two formats are supported:
//!
//! - BIO columns (`token<TAB>tag`, blank line between sentences), flat entities only.
//! - Span JSON lines (`{"tokens":[..],"entities":[{"spans":[[s,d],..],"type":".."}]}`).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CorpusError {
    #[error("line {line}: expected `token<TAB>tag`, found {columns} column(s)")]
    MalformedLine { line: usize, columns: usize },
    #[error("line {line}: unrecognized tag `{tag}`")]
    BadTag { line: usize, tag: String },
    #[error("line {line}: tag `{tag}` does not continue a `{expected}` entity")]
    DanglingI {
        line: usize,
        tag: String,
        expected: String,
    },
    #[error("corpus contains no sentences")]
    EmptyCorpus,
    #[error("sentence {sentence} is not flat: {reason}")]
    NotFlat { sentence: usize, reason: String },
    #[error("sentence {sentence}: token `{token}` cannot be written to a column file")]
    UnwritableToken { sentence: usize, token: String },
    #[error("sentence {sentence} has no tokens")]
    EmptySentence { sentence: usize },
    #[error("line {line}: {message}")]
    SchemaError { line: usize, message: String },
    #[error("line {line}: span [{start},{end}] out of range for {len} token(s)")]
    IndexOutOfRange {
        line: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("line {line}: span [{start},{end}] has start after end")]
    InvalidSpan { line: usize, start: usize, end: usize },
    #[error("line {line}: spans of one entity overlap or are out of order")]
    OverlapWithinEntity { line: usize },
    #[error("line {line}: duplicate entity {spans} {etype}")]
    DuplicateEntity {
        line: usize,
        spans: String,
        etype: String,
    },
    #[error("invalid entity type `{0}`")]
    InvalidType(String),
}

/// An entity label such as `PER` or `DISORDER`.
///
/// Labels never contain whitespace or any of `[`, `]`, `/`, which are reserved by the
/// condition-sequence tags.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EntityType(String);

impl EntityType {
    pub fn new(name: impl Into<String>) -> Result<Self, CorpusError> {
        let name = name.into();
        if Self::is_valid_name(&name) {
            Ok(EntityType(name))
        } else {
            Err(CorpusError::InvalidType(name))
        }
    }

    pub fn is_valid_name(name: &str) -> bool {
        !name.is_empty()
            && !name
                .chars()
                .any(|c| c.is_whitespace() || matches!(c, '[' | ']' | '/'))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for EntityType {
    type Error = CorpusError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        EntityType::new(value)
    }
}

impl From<EntityType> for String {
    fn from(value: EntityType) -> Self {
        value.0
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Inclusive token range `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// One entity mention: ordered, non-overlapping spans plus the mention text per span.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Entity {
    pub spans: Vec<Span>,
    pub etype: EntityType,
    /// Tokens covered by each span, parallel to `spans`.
    pub surface: Vec<Vec<String>>,
}

impl Entity {
    /// Builds an entity over `tokens`, filling the surface cache.
    ///
    /// Span ordering and range are not checked here; see [`validate`].
    pub fn from_tokens(tokens: &[String], spans: Vec<Span>, etype: EntityType) -> Self {
        let surface = spans
            .iter()
            .map(|s| {
                tokens
                    .get(s.start..=s.end.min(tokens.len().saturating_sub(1)))
                    .map(<[String]>::to_vec)
                    .unwrap_or_default()
            })
            .collect();
        Entity {
            spans,
            etype,
            surface,
        }
    }

    pub fn is_multi_span(&self) -> bool {
        self.spans.len() > 1
    }

    pub fn overlaps(&self, other: &Entity) -> bool {
        self.spans
            .iter()
            .any(|a| other.spans.iter().any(|b| a.overlaps(b)))
    }

    fn same_annotation(&self, other: &Entity) -> bool {
        self.spans == other.spans && self.etype == other.etype
    }

    fn describe_spans(&self) -> String {
        let parts: Vec<String> = self
            .spans
            .iter()
            .map(|s| format!("[{},{}]", s.start, s.end))
            .collect();
        format!("[{}]", parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AnnotatedSentence {
    pub tokens: Vec<String>,
    pub entities: Vec<Entity>,
}

impl AnnotatedSentence {
    pub fn new(tokens: Vec<String>, entities: Vec<Entity>) -> Self {
        AnnotatedSentence { tokens, entities }
    }

    /// Whitespace tokenization, for tests and small fixtures.
    pub fn from_text(text: &str) -> Self {
        AnnotatedSentence {
            tokens: text.split_whitespace().map(str::to_owned).collect(),
            entities: Vec::new(),
        }
    }

    /// Adds an entity over the given spans and returns `self` for chaining.
    pub fn with_entity(mut self, spans: &[(usize, usize)], etype: &str) -> Self {
        let spans = spans.iter().map(|&(s, e)| Span::new(s, e)).collect();
        let etype = EntityType::new(etype).expect("valid entity type");
        let entity = Entity::from_tokens(&self.tokens, spans, etype);
        self.entities.push(entity);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Flat,
    Nested,
    #[serde(rename = "disc")]
    Discontinuous,
}

impl TaskKind {
    fn allows_overlap(self) -> bool {
        !matches!(self, TaskKind::Flat)
    }

    fn allows_multi_span(self) -> bool {
        matches!(self, TaskKind::Discontinuous)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    SpanOutOfRange { entity: usize, span: Span },
    InvalidSpan { entity: usize, span: Span },
    NoSpans { entity: usize },
    UnorderedSpans { entity: usize },
    SurfaceMismatch { entity: usize },
    DuplicateEntity { first: usize, second: usize },
    Overlap { first: usize, second: usize },
    MultiSpan { entity: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SpanOutOfRange { entity, span } => {
                write!(f, "entity {entity}: span [{},{}] out of range", span.start, span.end)
            }
            Violation::InvalidSpan { entity, span } => {
                write!(f, "entity {entity}: span [{},{}] has start after end", span.start, span.end)
            }
            Violation::NoSpans { entity } => write!(f, "entity {entity}: no spans"),
            Violation::UnorderedSpans { entity } => {
                write!(f, "entity {entity}: spans overlap or are out of order")
            }
            Violation::SurfaceMismatch { entity } => {
                write!(f, "entity {entity}: surface differs from tokens")
            }
            Violation::DuplicateEntity { first, second } => {
                write!(f, "entities {first} and {second} are identical")
            }
            Violation::Overlap { first, second } => {
                write!(f, "entities {first} and {second} overlap")
            }
            Violation::MultiSpan { entity } => write!(f, "entity {entity}: has several spans"),
        }
    }
}

/// Checks a sentence against the structural invariants and the constraints of `kind`.
///
/// Returns every violation found; an empty list means the sentence is valid.
pub fn validate(sentence: &AnnotatedSentence, kind: TaskKind) -> Vec<Violation> {
    let mut violations = Vec::new();
    let n = sentence.tokens.len();

    for (i, entity) in sentence.entities.iter().enumerate() {
        if entity.spans.is_empty() {
            violations.push(Violation::NoSpans { entity: i });
            continue;
        }
        let mut structurally_ok = true;
        for span in &entity.spans {
            if span.start > span.end {
                violations.push(Violation::InvalidSpan { entity: i, span: *span });
                structurally_ok = false;
            } else if span.end >= n {
                violations.push(Violation::SpanOutOfRange { entity: i, span: *span });
                structurally_ok = false;
            }
        }
        if entity.spans.windows(2).any(|w| w[1].start <= w[0].end) {
            violations.push(Violation::UnorderedSpans { entity: i });
        }
        if structurally_ok {
            let matches = entity.surface.len() == entity.spans.len()
                && entity
                    .spans
                    .iter()
                    .zip(&entity.surface)
                    .all(|(span, words)| sentence.tokens[span.start..=span.end] == words[..]);
            if !matches {
                violations.push(Violation::SurfaceMismatch { entity: i });
            }
        }
        if entity.is_multi_span() && !kind.allows_multi_span() {
            violations.push(Violation::MultiSpan { entity: i });
        }
    }

    for (i, a) in sentence.entities.iter().enumerate() {
        for (j, b) in sentence.entities.iter().enumerate().skip(i + 1) {
            if a.same_annotation(b) {
                violations.push(Violation::DuplicateEntity { first: i, second: j });
            } else if !kind.allows_overlap() && a.overlaps(b) {
                violations.push(Violation::Overlap { first: i, second: j });
            }
        }
    }

    violations
}

// ----------------------------------------------------------------------------
// BIO columns
// ----------------------------------------------------------------------------

enum Tag<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

fn parse_tag(tag: &str) -> Option<Tag<'_>> {
    if tag == "O" {
        return Some(Tag::Outside);
    }
    let (prefix, name) = tag.split_once('-')?;
    if !EntityType::is_valid_name(name) {
        return None;
    }
    match prefix {
        "B" => Some(Tag::Begin(name)),
        "I" => Some(Tag::Inside(name)),
        _ => None,
    }
}

#[derive(Default)]
struct BioSentence {
    tokens: Vec<String>,
    // (start, end, type) of closed and open runs
    runs: Vec<(usize, usize, String)>,
    open: bool,
}

impl BioSentence {
    fn finish(self) -> AnnotatedSentence {
        let BioSentence { tokens, runs, .. } = self;
        let entities = runs
            .into_iter()
            .map(|(start, end, name)| {
                let etype = EntityType(name);
                Entity::from_tokens(&tokens, vec![Span::new(start, end)], etype)
            })
            .collect();
        AnnotatedSentence { tokens, entities }
    }
}

/// Parses a BIO column corpus. Each B/I run becomes one single-span entity.
pub fn parse_bio(text: &str) -> Result<Vec<AnnotatedSentence>, CorpusError> {
    let mut sentences = Vec::new();
    let mut current = BioSentence::default();

    let body = text.strip_suffix('\n').unwrap_or(text);
    for (idx, line) in body.split('\n').enumerate() {
        let line_no = idx + 1;
        if line.is_empty() {
            if !current.tokens.is_empty() {
                sentences.push(std::mem::take(&mut current).finish());
            }
            continue;
        }
        let columns: Vec<&str> = line.split('\t').collect();
        if columns.len() != 2 || columns[0].is_empty() {
            return Err(CorpusError::MalformedLine {
                line: line_no,
                columns: columns.len(),
            });
        }
        let (token, tag) = (columns[0], columns[1]);
        let position = current.tokens.len();
        match parse_tag(tag) {
            Some(Tag::Outside) => current.open = false,
            Some(Tag::Begin(name)) => {
                current.runs.push((position, position, name.to_owned()));
                current.open = true;
            }
            Some(Tag::Inside(name)) => match current.runs.last_mut() {
                Some(run) if current.open && run.2 == name => run.1 = position,
                _ => {
                    return Err(CorpusError::DanglingI {
                        line: line_no,
                        tag: tag.to_owned(),
                        expected: name.to_owned(),
                    })
                }
            },
            None => {
                return Err(CorpusError::BadTag {
                    line: line_no,
                    tag: tag.to_owned(),
                })
            }
        }
        current.tokens.push(token.to_owned());
    }
    if !current.tokens.is_empty() {
        sentences.push(current.finish());
    }

    if sentences.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(sentences)
}

/// Writes flat sentences as BIO columns, each sentence followed by a blank line.
pub fn emit_bio(sentences: &[AnnotatedSentence]) -> Result<String, CorpusError> {
    let mut out = String::new();
    for (i, sentence) in sentences.iter().enumerate() {
        if sentence.tokens.is_empty() {
            return Err(CorpusError::EmptySentence { sentence: i });
        }
        if let Some(v) = validate(sentence, TaskKind::Flat).first() {
            return Err(CorpusError::NotFlat {
                sentence: i,
                reason: v.to_string(),
            });
        }
        if let Some(bad) = sentence
            .tokens
            .iter()
            .find(|t| t.is_empty() || t.contains(['\t', '\n', '\r']))
        {
            return Err(CorpusError::UnwritableToken {
                sentence: i,
                token: bad.clone(),
            });
        }

        let mut tags = vec![String::from("O"); sentence.tokens.len()];
        for entity in &sentence.entities {
            let span = entity.spans[0];
            tags[span.start] = format!("B-{}", entity.etype);
            for tag in &mut tags[span.start + 1..=span.end] {
                *tag = format!("I-{}", entity.etype);
            }
        }
        for (token, tag) in sentence.tokens.iter().zip(&tags) {
            out.push_str(token);
            out.push('\t');
            out.push_str(tag);
            out.push('\n');
        }
        out.push('\n');
    }
    Ok(out)
}

// ----------------------------------------------------------------------------
// Span JSON lines
// ----------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpanLine {
    tokens: Vec<String>,
    entities: Vec<SpanLineEntity>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpanLineEntity {
    spans: Vec<[usize; 2]>,
    #[serde(rename = "type")]
    etype: String,
}

fn sentence_from_line(record: SpanLine, line: usize) -> Result<AnnotatedSentence, CorpusError> {
    let SpanLine { tokens, entities } = record;
    let mut parsed: Vec<Entity> = Vec::with_capacity(entities.len());
    for raw in entities {
        let etype = EntityType::new(raw.etype).map_err(|e| CorpusError::SchemaError {
            line,
            message: e.to_string(),
        })?;
        if raw.spans.is_empty() {
            return Err(CorpusError::SchemaError {
                line,
                message: format!("entity of type `{etype}` has no spans"),
            });
        }
        let mut spans = Vec::with_capacity(raw.spans.len());
        for [start, end] in raw.spans {
            if start > end {
                return Err(CorpusError::InvalidSpan { line, start, end });
            }
            if end >= tokens.len() {
                return Err(CorpusError::IndexOutOfRange {
                    line,
                    start,
                    end,
                    len: tokens.len(),
                });
            }
            spans.push(Span::new(start, end));
        }
        if spans.windows(2).any(|w| w[1].start <= w[0].end) {
            return Err(CorpusError::OverlapWithinEntity { line });
        }
        let entity = Entity::from_tokens(&tokens, spans, etype);
        if parsed.iter().any(|e| e.same_annotation(&entity)) {
            return Err(CorpusError::DuplicateEntity {
                line,
                spans: entity.describe_spans(),
                etype: entity.etype.to_string(),
            });
        }
        parsed.push(entity);
    }
    Ok(AnnotatedSentence::new(tokens, parsed))
}

/// Parses span JSON lines. Blank lines are skipped.
pub fn parse_spans(text: &str) -> Result<Vec<AnnotatedSentence>, CorpusError> {
    let mut sentences = Vec::new();
    for (idx, line) in text.split('\n').enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: SpanLine = serde_json::from_str(line).map_err(|e| CorpusError::SchemaError {
            line: idx + 1,
            message: e.to_string(),
        })?;
        sentences.push(sentence_from_line(record, idx + 1)?);
    }
    if sentences.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(sentences)
}

/// Writes one compact JSON object per sentence, keys in fixed order, LF-terminated.
pub fn emit_spans(sentences: &[AnnotatedSentence]) -> String {
    let mut out = String::new();
    for sentence in sentences {
        let record = SpanLine {
            tokens: sentence.tokens.clone(),
            entities: sentence
                .entities
                .iter()
                .map(|e| SpanLineEntity {
                    spans: e.spans.iter().map(|s| [s.start, s.end]).collect(),
                    etype: e.etype.to_string(),
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&record).expect("span records always serialize"));
        out.push('\n');
    }
    out
}
