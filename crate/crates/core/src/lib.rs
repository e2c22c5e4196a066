//! Entity-to-text data augmentation for named entity recognition.
//!
//! The crate covers the whole loop:
//!
//! 1. [`corpus`] reads and writes annotated sentences (BIO columns and span JSON lines),
//!    including nested and discontinuous entities.
//! 2. [`entity_ops`] builds a type-indexed pool of mentions and perturbs entity lists
//!    (add, delete, replace, swap), then serializes them into tagged condition sequences.
//! 3. [`scorer`] defines the next-token scoring contract, with an n-gram backoff model,
//!    a line-delimited JSON client for external models, and perplexity.
//! 4. [`decoder`] runs greedy, beam and rank-penalized diverse beam search over any scorer.
//! 5. [`marker`] maps generated tokens back to span annotations and rejects mismatches.
//! 6. [`pipeline`] wires everything together behind the `augment` binary.

pub mod corpus;
pub mod decoder;
pub mod entity_ops;
pub mod marker;
pub mod pipeline;
pub mod scorer;

pub use corpus::{AnnotatedSentence, Entity, EntityType, Span, TaskKind};
pub use decoder::{DecodeConfig, DecodeMode, Hypothesis};
pub use entity_ops::{AugOp, ConditionSequence, DraftItem, EntityListDraft, EntityPool, Surface};
pub use marker::MarkOutcome;
pub use scorer::{ScoreRequest, ScoreResponse, Scorer};
