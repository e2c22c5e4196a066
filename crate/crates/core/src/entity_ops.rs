//! Entity-list augmentation and condition serialization.
//!
//! An [`EntityListDraft`] is an entity list detached from any text. The four operations
//! perturb one draft at a time:
//!
//! | op      | effect                                                          |
//! |---------|-----------------------------------------------------------------|
//! | add     | insert a same-type mention from the pool right after a sampled one |
//! | delete  | drop a sampled mention                                          |
//! | replace | swap a sampled mention for a same-type mention from the pool    |
//! | swap    | exchange the positions of two sampled mentions                  |
//!
//! Drafts are turned into generator input with [`serialize_condition`]:
//! `[ORG] EU [/ORG] [MISC] Spanish [/MISC]`. Discontinuous mentions keep their parts,
//! separated by the gap marker `[]`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnnotatedSentence, EntityType};

/// Separates the parts of a discontinuous mention inside a condition sequence.
pub const GAP_TOKEN: &str = "[]";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OpError {
    #[error("no pool candidate left for any entity type in the draft")]
    NoCandidate,
    #[error("operation needs at least 2 entities, draft has {0}")]
    TooFewEntities(usize),
    #[error("draft is empty")]
    EmptyDraft,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConditionError {
    #[error("unbalanced tags at token {position}: {message}")]
    UnbalancedTags { position: usize, message: String },
    #[error("unknown tag token `{token}` at position {position}")]
    UnknownTagToken { position: usize, token: String },
    #[error("empty mention or mention part at token {position}")]
    EmptySurface { position: usize },
    #[error("mention token `{0}` would be read back as a tag")]
    TagLikeToken(String),
}

/// Mention text, one token list per part. Contiguous mentions have a single part.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Surface(pub Vec<Vec<String>>);

impl Surface {
    pub fn contiguous<S: AsRef<str>>(tokens: &[S]) -> Self {
        Surface(vec![tokens.iter().map(|t| t.as_ref().to_owned()).collect()])
    }

    pub fn parts(&self) -> &[Vec<String>] {
        &self.0
    }

    pub fn is_multi_part(&self) -> bool {
        self.0.len() > 1
    }

    pub fn is_valid(&self) -> bool {
        !self.0.is_empty() && self.0.iter().all(|p| !p.is_empty())
    }
}

impl fmt::Display for Surface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|p| p.join(" ")).collect();
        f.write_str(&parts.join(" … "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DraftItem {
    pub surface: Surface,
    pub etype: EntityType,
}

impl DraftItem {
    pub fn new(surface: Surface, etype: EntityType) -> Self {
        DraftItem { surface, etype }
    }
}

/// An ordered entity list without spans.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EntityListDraft {
    pub items: Vec<DraftItem>,
}

impl EntityListDraft {
    pub fn new(items: Vec<DraftItem>) -> Self {
        EntityListDraft { items }
    }

    /// The draft of a sentence's gold entities, in annotation order.
    pub fn from_sentence(sentence: &AnnotatedSentence) -> Self {
        let items = sentence
            .entities
            .iter()
            .map(|e| DraftItem::new(Surface(e.surface.clone()), e.etype.clone()))
            .collect();
        EntityListDraft { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn contains_surface(&self, surface: &Surface) -> bool {
        self.items.iter().any(|i| &i.surface == surface)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugOp {
    None,
    Add,
    Delete,
    Replace,
    Swap,
    All,
}

impl AugOp {
    pub const CONCRETE: [AugOp; 4] = [AugOp::Add, AugOp::Delete, AugOp::Replace, AugOp::Swap];

    /// `All` stands for the four concrete ops, each applied to its own copy.
    pub fn expand(self) -> Vec<AugOp> {
        match self {
            AugOp::All => Self::CONCRETE.to_vec(),
            op => vec![op],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AugOp::None => "none",
            AugOp::Add => "add",
            AugOp::Delete => "delete",
            AugOp::Replace => "replace",
            AugOp::Swap => "swap",
            AugOp::All => "all",
        }
    }
}

impl fmt::Display for AugOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugOp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(AugOp::None),
            "add" => Ok(AugOp::Add),
            "delete" => Ok(AugOp::Delete),
            "replace" => Ok(AugOp::Replace),
            "swap" => Ok(AugOp::Swap),
            "all" => Ok(AugOp::All),
            other => Err(format!("unknown augmentation op `{other}`")),
        }
    }
}

/// Mentions observed in a training corpus, grouped by type in first-occurrence order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntityPool {
    by_type: BTreeMap<EntityType, Vec<Surface>>,
}

impl EntityPool {
    pub fn get(&self, etype: &EntityType) -> &[Surface] {
        self.by_type.get(etype).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn types(&self) -> impl Iterator<Item = &EntityType> {
        self.by_type.keys()
    }

    pub fn is_empty(&self) -> bool {
        self.by_type.is_empty()
    }

    pub fn len(&self) -> usize {
        self.by_type.values().map(Vec::len).sum()
    }

    /// Pool entries of `etype` that are not already used anywhere in `draft`.
    fn candidates<'a>(&'a self, etype: &EntityType, draft: &EntityListDraft) -> Vec<&'a Surface> {
        self.get(etype)
            .iter()
            .filter(|s| !draft.contains_surface(s))
            .collect()
    }
}

pub fn build_pool(train: &[AnnotatedSentence]) -> EntityPool {
    let mut by_type: BTreeMap<EntityType, Vec<Surface>> = BTreeMap::new();
    let mut seen: HashSet<(EntityType, Surface)> = HashSet::new();
    for entity in train.iter().flat_map(|s| &s.entities) {
        let surface = Surface(entity.surface.clone());
        if !surface.is_valid() {
            continue;
        }
        if seen.insert((entity.etype.clone(), surface.clone())) {
            by_type.entry(entity.etype.clone()).or_default().push(surface);
        }
    }
    EntityPool { by_type }
}

/// Positions whose type still has at least one unused pool candidate.
fn expandable_positions(draft: &EntityListDraft, pool: &EntityPool) -> Vec<usize> {
    (0..draft.len())
        .filter(|&i| !pool.candidates(&draft.items[i].etype, draft).is_empty())
        .collect()
}

fn sample_expansion<R: Rng + ?Sized>(
    draft: &EntityListDraft,
    pool: &EntityPool,
    rng: &mut R,
) -> Result<(usize, DraftItem), OpError> {
    if draft.is_empty() {
        return Err(OpError::EmptyDraft);
    }
    let positions = expandable_positions(draft, pool);
    if positions.is_empty() {
        return Err(OpError::NoCandidate);
    }
    let position = positions[rng.gen_range(0..positions.len())];
    let etype = &draft.items[position].etype;
    let candidates = pool.candidates(etype, draft);
    let surface = candidates[rng.gen_range(0..candidates.len())].clone();
    Ok((position, DraftItem::new(surface, etype.clone())))
}

/// Inserts a same-type pool mention right after a uniformly sampled entity.
pub fn op_add<R: Rng + ?Sized>(
    draft: &EntityListDraft,
    pool: &EntityPool,
    rng: &mut R,
) -> Result<EntityListDraft, OpError> {
    let (position, item) = sample_expansion(draft, pool, rng)?;
    let mut items = draft.items.clone();
    items.insert(position + 1, item);
    Ok(EntityListDraft { items })
}

pub fn op_delete<R: Rng + ?Sized>(
    draft: &EntityListDraft,
    rng: &mut R,
) -> Result<EntityListDraft, OpError> {
    if draft.len() < 2 {
        return Err(OpError::TooFewEntities(draft.len()));
    }
    let mut items = draft.items.clone();
    items.remove(rng.gen_range(0..items.len()));
    Ok(EntityListDraft { items })
}

/// Replaces a uniformly sampled entity with an unused same-type pool mention.
pub fn op_replace<R: Rng + ?Sized>(
    draft: &EntityListDraft,
    pool: &EntityPool,
    rng: &mut R,
) -> Result<EntityListDraft, OpError> {
    let (position, item) = sample_expansion(draft, pool, rng)?;
    let mut items = draft.items.clone();
    items[position] = item;
    Ok(EntityListDraft { items })
}

/// Exchanges two distinct, uniformly sampled positions.
pub fn op_swap<R: Rng + ?Sized>(
    draft: &EntityListDraft,
    rng: &mut R,
) -> Result<EntityListDraft, OpError> {
    let n = draft.len();
    if n < 2 {
        return Err(OpError::TooFewEntities(n));
    }
    let first = rng.gen_range(0..n);
    let mut second = rng.gen_range(0..n - 1);
    if second >= first {
        second += 1;
    }
    swap_positions(draft, first, second)
}

/// Exchanges the entities at `a` and `b`.
pub fn swap_positions(
    draft: &EntityListDraft,
    a: usize,
    b: usize,
) -> Result<EntityListDraft, OpError> {
    let n = draft.len();
    if n < 2 {
        return Err(OpError::TooFewEntities(n));
    }
    assert!(a < n && b < n && a != b, "swap positions must be distinct and in range");
    let mut items = draft.items.clone();
    items.swap(a, b);
    Ok(EntityListDraft { items })
}

/// Applies one concrete op. `None` returns the draft unchanged.
///
/// # Panics
///
/// On `AugOp::All`, which must be expanded first.
pub fn apply<R: Rng + ?Sized>(
    op: AugOp,
    draft: &EntityListDraft,
    pool: &EntityPool,
    rng: &mut R,
) -> Result<EntityListDraft, OpError> {
    match op {
        AugOp::None => {
            if draft.is_empty() {
                Err(OpError::EmptyDraft)
            } else {
                Ok(draft.clone())
            }
        }
        AugOp::Add => op_add(draft, pool, rng),
        AugOp::Delete => op_delete(draft, rng),
        AugOp::Replace => op_replace(draft, pool, rng),
        AugOp::Swap => op_swap(draft, rng),
        AugOp::All => panic!("AugOp::All must be expanded before it is applied"),
    }
}

// ----------------------------------------------------------------------------
// Condition sequences
// ----------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConditionSequence {
    pub tokens: Vec<String>,
}

impl ConditionSequence {
    pub fn new(tokens: Vec<String>) -> Self {
        ConditionSequence { tokens }
    }
}

pub fn open_tag(etype: &EntityType) -> String {
    format!("[{etype}]")
}

pub fn close_tag(etype: &EntityType) -> String {
    format!("[/{etype}]")
}

enum TagToken {
    Open(EntityType),
    Close(EntityType),
    Gap,
}

/// Classifies a bracketed token. `Ok(None)` for ordinary words.
fn classify(token: &str) -> Result<Option<TagToken>, ()> {
    if token == GAP_TOKEN {
        return Ok(Some(TagToken::Gap));
    }
    let inner = match token.strip_prefix('[').and_then(|t| t.strip_suffix(']')) {
        Some(inner) => inner,
        None => return Ok(None),
    };
    if let Some(name) = inner.strip_prefix('/') {
        EntityType::new(name).map(|t| Some(TagToken::Close(t))).map_err(|_| ())
    } else {
        EntityType::new(inner).map(|t| Some(TagToken::Open(t))).map_err(|_| ())
    }
}

pub fn serialize_condition(draft: &EntityListDraft) -> Result<ConditionSequence, ConditionError> {
    let mut tokens = Vec::new();
    for item in &draft.items {
        tokens.push(open_tag(&item.etype));
        for (i, part) in item.surface.parts().iter().enumerate() {
            if i > 0 {
                tokens.push(GAP_TOKEN.to_owned());
            }
            if part.is_empty() {
                return Err(ConditionError::EmptySurface {
                    position: tokens.len(),
                });
            }
            for word in part {
                if !matches!(classify(word), Ok(None)) {
                    return Err(ConditionError::TagLikeToken(word.clone()));
                }
                tokens.push(word.clone());
            }
        }
        if item.surface.parts().is_empty() {
            return Err(ConditionError::EmptySurface {
                position: tokens.len(),
            });
        }
        tokens.push(close_tag(&item.etype));
    }
    Ok(ConditionSequence { tokens })
}

pub fn deserialize_condition(seq: &ConditionSequence) -> Result<EntityListDraft, ConditionError> {
    let mut items = Vec::new();
    // (type, finished parts, current part)
    let mut open: Option<(EntityType, Vec<Vec<String>>, Vec<String>)> = None;

    for (position, token) in seq.tokens.iter().enumerate() {
        let kind = classify(token).map_err(|_| ConditionError::UnknownTagToken {
            position,
            token: token.clone(),
        })?;
        match (kind, open.as_mut()) {
            (Some(TagToken::Open(etype)), None) => open = Some((etype, Vec::new(), Vec::new())),
            (Some(TagToken::Open(_)), Some((outer, ..))) => {
                return Err(ConditionError::UnbalancedTags {
                    position,
                    message: format!("`{token}` opened inside `{}`", open_tag(outer)),
                })
            }
            (Some(TagToken::Close(etype)), Some((current, parts, part))) => {
                if &etype != current {
                    return Err(ConditionError::UnbalancedTags {
                        position,
                        message: format!("`{token}` closes `{}`", open_tag(current)),
                    });
                }
                if part.is_empty() {
                    return Err(ConditionError::EmptySurface { position });
                }
                parts.push(std::mem::take(part));
                let (etype, parts, _) = open.take().expect("open entity");
                items.push(DraftItem::new(Surface(parts), etype));
            }
            (Some(TagToken::Gap), Some((_, parts, part))) => {
                if part.is_empty() {
                    return Err(ConditionError::EmptySurface { position });
                }
                parts.push(std::mem::take(part));
            }
            (None, Some((_, _, part))) => part.push(token.clone()),
            (_, None) => {
                return Err(ConditionError::UnbalancedTags {
                    position,
                    message: format!("`{token}` outside of any entity"),
                })
            }
        }
    }
    if let Some((etype, ..)) = open {
        return Err(ConditionError::UnbalancedTags {
            position: seq.tokens.len(),
            message: format!("`{}` never closed", open_tag(&etype)),
        });
    }
    Ok(EntityListDraft { items })
}
