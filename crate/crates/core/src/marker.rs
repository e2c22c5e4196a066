//! Recovering span annotations in generated text from the entity list that conditioned it.
//!
//! Matching is exact, case-sensitive and whole-token. Entities are placed in draft
//! order at their leftmost admissible occurrence; if any entity cannot be placed the
//! whole generation is rejected.

use std::fmt;

use crate::corpus::{validate, AnnotatedSentence, Entity, Span, TaskKind};
use crate::entity_ops::{DraftItem, EntityListDraft};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectReason {
    /// The entity's mention (or one of its parts, in order) does not occur.
    Missing { entity: usize, surface: String },
    /// Every occurrence is already taken by an identical annotation.
    Duplicate { entity: usize, surface: String },
    /// The mention shape is not allowed by the task kind (e.g. multi-part under flat).
    ModeViolation { entity: usize, kind: TaskKind },
    /// The marked sentence failed validation.
    Invalid(String),
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::Missing { entity, surface } => {
                write!(f, "entity {entity} `{surface}` not found")
            }
            RejectReason::Duplicate { entity, surface } => {
                write!(f, "entity {entity} `{surface}` has no unused occurrence")
            }
            RejectReason::ModeViolation { entity, kind } => {
                write!(f, "entity {entity} has several parts, not allowed for {kind:?}")
            }
            RejectReason::Invalid(msg) => write!(f, "marked sentence invalid: {msg}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MarkOutcome {
    Marked {
        sentence: AnnotatedSentence,
        /// Entities whose mention occurs more than once; only one occurrence is labeled.
        multi_occurrence: usize,
    },
    Rejected(RejectReason),
}

impl MarkOutcome {
    pub fn is_marked(&self) -> bool {
        matches!(self, MarkOutcome::Marked { .. })
    }

    pub fn sentence(&self) -> Option<&AnnotatedSentence> {
        match self {
            MarkOutcome::Marked { sentence, .. } => Some(sentence),
            MarkOutcome::Rejected(_) => None,
        }
    }
}

/// Start positions where `needle` occurs in `tokens` at or after `from`.
fn occurrences<'a>(
    tokens: &'a [String],
    needle: &'a [String],
    from: usize,
) -> impl Iterator<Item = usize> + 'a {
    let last = (tokens.len() + 1).saturating_sub(needle.len());
    (from..last).filter(move |&i| !needle.is_empty() && tokens[i..i + needle.len()] == *needle)
}

struct Assigner<'a> {
    tokens: &'a [String],
    entities: Vec<Entity>,
    multi_occurrence: usize,
}

impl<'a> Assigner<'a> {
    fn new(tokens: &'a [String]) -> Self {
        Assigner {
            tokens,
            entities: Vec::new(),
            multi_occurrence: 0,
        }
    }

    fn push(&mut self, spans: Vec<Span>, item: &DraftItem) {
        self.entities
            .push(Entity::from_tokens(self.tokens, spans, item.etype.clone()));
    }

    fn taken(&self, spans: &[Span], item: &DraftItem) -> bool {
        self.entities
            .iter()
            .any(|e| e.spans == spans && e.etype == item.etype)
    }

    fn overlaps_any(&self, span: Span) -> bool {
        self.entities
            .iter()
            .any(|e| e.spans.iter().any(|s| s.overlaps(&span)))
    }

    fn note_repeats(&mut self, item: &DraftItem) {
        let parts = item.surface.parts();
        if parts.len() == 1 && occurrences(self.tokens, &parts[0], 0).nth(1).is_some() {
            self.multi_occurrence += 1;
        }
    }

    /// Leftmost single-part occurrence accepted by `admissible`.
    fn place_contiguous(
        &mut self,
        index: usize,
        item: &DraftItem,
        admissible: impl Fn(&Self, Span) -> bool,
    ) -> Result<(), RejectReason> {
        let part = &item.surface.parts()[0];
        let mut found_any = false;
        let mut placed = None;
        for start in occurrences(self.tokens, part, 0) {
            found_any = true;
            let span = Span::new(start, start + part.len() - 1);
            if admissible(self, span) {
                placed = Some(span);
                break;
            }
        }
        match placed {
            Some(span) => {
                self.note_repeats(item);
                self.push(vec![span], item);
                Ok(())
            }
            None if found_any => Err(RejectReason::Duplicate {
                entity: index,
                surface: item.surface.to_string(),
            }),
            None => Err(RejectReason::Missing {
                entity: index,
                surface: item.surface.to_string(),
            }),
        }
    }

    /// Parts matched left to right, each searched after the previous part's end.
    fn place_ordered_parts(&mut self, index: usize, item: &DraftItem) -> Result<(), RejectReason> {
        let mut spans = Vec::with_capacity(item.surface.parts().len());
        let mut from = 0;
        for part in item.surface.parts() {
            let start = occurrences(self.tokens, part, from).next().ok_or_else(|| {
                RejectReason::Missing {
                    entity: index,
                    surface: item.surface.to_string(),
                }
            })?;
            let span = Span::new(start, start + part.len() - 1);
            from = span.end + 1;
            spans.push(span);
        }
        if self.taken(&spans, item) {
            return Err(RejectReason::Duplicate {
                entity: index,
                surface: item.surface.to_string(),
            });
        }
        self.push(spans, item);
        Ok(())
    }

    fn finish(self, kind: TaskKind) -> MarkOutcome {
        let sentence = AnnotatedSentence::new(self.tokens.to_vec(), self.entities);
        let violations = validate(&sentence, kind);
        if let Some(v) = violations.first() {
            return MarkOutcome::Rejected(RejectReason::Invalid(v.to_string()));
        }
        MarkOutcome::Marked {
            sentence,
            multi_occurrence: self.multi_occurrence,
        }
    }
}

fn reject_multi_part(draft: &EntityListDraft, kind: TaskKind) -> Option<MarkOutcome> {
    draft
        .items
        .iter()
        .position(|i| i.surface.is_multi_part())
        .map(|entity| MarkOutcome::Rejected(RejectReason::ModeViolation { entity, kind }))
}

fn reject_empty(draft: &EntityListDraft) -> Option<MarkOutcome> {
    draft
        .items
        .iter()
        .position(|i| !i.surface.is_valid())
        .map(|entity| {
            MarkOutcome::Rejected(RejectReason::Missing {
                entity,
                surface: String::new(),
            })
        })
}

/// Flat marking: leftmost occurrence that overlaps no earlier-placed entity.
pub fn match_flat(tokens: &[String], draft: &EntityListDraft) -> MarkOutcome {
    if let Some(rejected) = reject_empty(draft).or_else(|| reject_multi_part(draft, TaskKind::Flat)) {
        return rejected;
    }
    let mut assigner = Assigner::new(tokens);
    for (index, item) in draft.items.iter().enumerate() {
        if let Err(reason) = assigner.place_contiguous(index, item, |a, span| !a.overlaps_any(span)) {
            return MarkOutcome::Rejected(reason);
        }
    }
    assigner.finish(TaskKind::Flat)
}

/// Nested marking: overlaps are allowed, but one occurrence is never labeled twice
/// with the same type.
pub fn match_nested(tokens: &[String], draft: &EntityListDraft) -> MarkOutcome {
    if let Some(rejected) = reject_empty(draft).or_else(|| reject_multi_part(draft, TaskKind::Nested)) {
        return rejected;
    }
    let mut assigner = Assigner::new(tokens);
    for (index, item) in draft.items.iter().enumerate() {
        if let Err(reason) = assigner.place_contiguous(index, item, |a, span| !a.taken(&[span], item)) {
            return MarkOutcome::Rejected(reason);
        }
    }
    assigner.finish(TaskKind::Nested)
}

/// Discontinuous marking: multi-part mentions are matched part by part in text order;
/// single-part mentions behave as in [`match_nested`].
pub fn match_discontinuous(tokens: &[String], draft: &EntityListDraft) -> MarkOutcome {
    if let Some(rejected) = reject_empty(draft) {
        return rejected;
    }
    let mut assigner = Assigner::new(tokens);
    for (index, item) in draft.items.iter().enumerate() {
        let placed = if item.surface.is_multi_part() {
            assigner.place_ordered_parts(index, item)
        } else {
            assigner.place_contiguous(index, item, |a, span| !a.taken(&[span], item))
        };
        if let Err(reason) = placed {
            return MarkOutcome::Rejected(reason);
        }
    }
    assigner.finish(TaskKind::Discontinuous)
}

pub fn mark(tokens: &[String], draft: &EntityListDraft, kind: TaskKind) -> MarkOutcome {
    match kind {
        TaskKind::Flat => match_flat(tokens, draft),
        TaskKind::Nested => match_nested(tokens, draft),
        TaskKind::Discontinuous => match_discontinuous(tokens, draft),
    }
}
