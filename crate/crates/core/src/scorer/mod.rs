//! Conditional next-token scoring.
//!
//! A [`Scorer`] maps `(condition, prefix)` to log-probabilities over its vocabulary for
//! the next token. Conditioning is prefix concatenation, so any sequence model works:
//! the scored history is `condition ++ <sep> ++ <s> ++ prefix`.

mod external;
mod ngram;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entity_ops::ConditionSequence;

pub use external::{Endpoint, ExternalScorer};
pub use ngram::{train_ngram, NGramModel, BACKOFF_FACTOR, DEFAULT_ORDER};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
pub const SEP: &str = "<sep>";

pub const RESERVED: [&str; 4] = [BOS, EOS, UNK, SEP];

/// Tolerance for `logsumexp(logprobs) == 0` on full local distributions.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("scorer timed out ({context})")]
    Timeout { context: String },
    #[error("scorer protocol error ({context}): {message}")]
    ProtocolError { context: String, message: String },
    #[error("scorer server error ({context}): {message}")]
    ServerError { context: String, message: String },
    #[error("cannot reach scorer at {endpoint}: {message}")]
    Unreachable { endpoint: String, message: String },
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("invalid score request: {0}")]
    InvalidRequest(String),
    #[error("no training pairs")]
    EmptyTraining,
    #[error("n-gram order must be at least 1")]
    InvalidOrder,
    #[error("token `{token}` at position {position} has zero probability")]
    ZeroProbability { position: usize, token: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub condition: Vec<String>,
    pub prefix: Vec<String>,
}

impl ScoreRequest {
    pub fn new(condition: &ConditionSequence, prefix: &[String]) -> Self {
        ScoreRequest {
            condition: condition.tokens.clone(),
            prefix: prefix.to_vec(),
        }
    }

    pub(crate) fn check(&self) -> Result<(), ScoreError> {
        if self.prefix.iter().any(|t| t == EOS) {
            return Err(ScoreError::InvalidRequest("prefix contains the end token".into()));
        }
        Ok(())
    }

    fn context(&self) -> String {
        format!(
            "condition of {} token(s), prefix of {} token(s)",
            self.condition.len(),
            self.prefix.len()
        )
    }
}

/// Next-token log-probabilities. `tokens` and `logprobs` are parallel.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreResponse {
    pub tokens: Vec<String>,
    pub logprobs: Vec<f64>,
    /// Set when only the top-k tokens were returned, so the mass does not sum to one.
    pub truncated: bool,
}

impl ScoreResponse {
    pub fn new(tokens: Vec<String>, logprobs: Vec<f64>, truncated: bool) -> Self {
        assert_eq!(tokens.len(), logprobs.len(), "tokens and logprobs must be parallel");
        ScoreResponse {
            tokens,
            logprobs,
            truncated,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.tokens.iter().map(String::as_str).zip(self.logprobs.iter().copied())
    }

    pub fn logprob(&self, token: &str) -> Option<f64> {
        self.tokens.iter().position(|t| t == token).map(|i| self.logprobs[i])
    }

    pub fn logsumexp(&self) -> f64 {
        logsumexp(&self.logprobs)
    }

    /// Keeps the `k` most likely tokens (ties by token) and flags the response.
    pub fn top_k(&self, k: usize) -> ScoreResponse {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            self.logprobs[b]
                .total_cmp(&self.logprobs[a])
                .then_with(|| self.tokens[a].cmp(&self.tokens[b]))
        });
        order.truncate(k);
        ScoreResponse {
            tokens: order.iter().map(|&i| self.tokens[i].clone()).collect(),
            logprobs: order.iter().map(|&i| self.logprobs[i]).collect(),
            truncated: k < self.len() || self.truncated,
        }
    }
}

pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub trait Scorer: Send + Sync {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScoreError>;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScoreError> {
        (**self).score(request)
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScoreError> {
        (**self).score(request)
    }
}

impl<S: Scorer + ?Sized> Scorer for Arc<S> {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScoreError> {
        (**self).score(request)
    }
}

/// Token list with stable, contiguous indices; reserved tokens come first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: std::collections::HashMap<String, u32>,
}

impl Vocab {
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Vocab {
            tokens: Vec::new(),
            index: Default::default(),
        };
        for t in RESERVED {
            vocab.insert(t);
        }
        for t in tokens {
            vocab.insert(t.as_ref());
        }
        vocab
    }

    fn insert(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_owned());
        self.index.insert(token.to_owned(), id);
        id
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Index of `token`, or of `<unk>` for unknown tokens.
    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or_else(|| self.index[UNK])
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl fmt::Display for Vocab {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "vocab of {} tokens", self.tokens.len())
    }
}

/// Assigns `-ln |V|` to every token regardless of the request.
#[derive(Debug, Clone)]
pub struct UniformScorer {
    tokens: Vec<String>,
}

impl UniformScorer {
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        assert!(!tokens.is_empty(), "uniform scorer needs at least one token");
        UniformScorer { tokens }
    }
}

impl Scorer for UniformScorer {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScoreError> {
        request.check()?;
        let lp = -(self.tokens.len() as f64).ln();
        Ok(ScoreResponse::new(
            self.tokens.clone(),
            vec![lp; self.tokens.len()],
            false,
        ))
    }
}

/// `exp(-(1/N) Σ log Pr(y_t | y_<t, condition))` over the text plus the end token.
///
/// Tokens missing from a response fall back to the `<unk>` entry when there is one.
pub fn perplexity<S: Scorer + ?Sized>(
    scorer: &S,
    condition: &ConditionSequence,
    text: &[String],
) -> Result<f64, ScoreError> {
    if text.is_empty() {
        return Err(ScoreError::InvalidRequest("perplexity of an empty text".into()));
    }
    let mut total = 0.0;
    for position in 0..=text.len() {
        let target = text.get(position).map(String::as_str).unwrap_or(EOS);
        let response = scorer.score(&ScoreRequest::new(condition, &text[..position]))?;
        let lp = response
            .logprob(target)
            .or_else(|| response.logprob(UNK))
            .filter(|lp| *lp > f64::NEG_INFINITY)
            .ok_or_else(|| ScoreError::ZeroProbability {
                position,
                token: target.to_owned(),
            })?;
        total += lp;
    }
    Ok((-total / (text.len() + 1) as f64).exp())
}
