//! Count-based n-gram scorer with stupid backoff.
//!
//! Training sequences are `condition ++ <sep> ++ <s> ++ text ++ </s>`. Scores use
//!
//! ```text
//! S(w | h_k) = c(h_k w) / c(h_k)        if c(h_k w) > 0
//!            = 0.4 * S(w | h_{k-1})     otherwise
//! S(w | ∅)   = (c(w) + 1) / (N + |V|)
//! ```
//!
//! normalized over the vocabulary so every response is a proper distribution.

use std::collections::HashMap;

use super::{ScoreError, ScoreRequest, ScoreResponse, Scorer, Vocab, BOS, EOS, SEP};
use crate::entity_ops::ConditionSequence;

pub const BACKOFF_FACTOR: f64 = 0.4;
pub const DEFAULT_ORDER: usize = 3;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct ContextCounts {
    total: u64,
    next: HashMap<u32, u64>,
}

#[derive(Debug, Clone)]
pub struct NGramModel {
    order: usize,
    vocab: Vocab,
    /// `tables[k]` holds counts for contexts of length `k`.
    tables: Vec<HashMap<Vec<u32>, ContextCounts>>,
}

fn training_sequence(condition: &ConditionSequence, text: &[String]) -> Vec<String> {
    let mut seq = Vec::with_capacity(condition.tokens.len() + text.len() + 3);
    seq.extend(condition.tokens.iter().cloned());
    seq.push(SEP.to_owned());
    seq.push(BOS.to_owned());
    seq.extend(text.iter().cloned());
    seq.push(EOS.to_owned());
    seq
}

pub fn train_ngram(
    pairs: &[(ConditionSequence, Vec<String>)],
    order: usize,
) -> Result<NGramModel, ScoreError> {
    if order == 0 {
        return Err(ScoreError::InvalidOrder);
    }
    if pairs.is_empty() {
        return Err(ScoreError::EmptyTraining);
    }
    let sequences: Vec<Vec<String>> = pairs
        .iter()
        .map(|(condition, text)| training_sequence(condition, text))
        .collect();
    let vocab = Vocab::new(sequences.iter().flatten());

    let mut tables: Vec<HashMap<Vec<u32>, ContextCounts>> = vec![HashMap::new(); order];
    for seq in &sequences {
        let ids: Vec<u32> = seq.iter().map(|t| vocab.id_or_unk(t)).collect();
        for (i, &target) in ids.iter().enumerate() {
            for k in 0..order.min(i + 1) {
                let counts = tables[k].entry(ids[i - k..i].to_vec()).or_default();
                counts.total += 1;
                *counts.next.entry(target).or_default() += 1;
            }
        }
    }

    Ok(NGramModel {
        order,
        vocab,
        tables,
    })
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Raw count of the n-gram `context ++ [next]`, for any length up to the model order.
    pub fn count(&self, context: &[&str], next: &str) -> u64 {
        let (Some(ctx), Some(next)) = (self.ids(context), self.vocab.id(next)) else {
            return 0;
        };
        self.tables
            .get(ctx.len())
            .and_then(|t| t.get(&ctx))
            .and_then(|c| c.next.get(&next))
            .copied()
            .unwrap_or(0)
    }

    /// Maximum-likelihood estimate `c(context next) / c(context)`, unsmoothed.
    pub fn relative_frequency(&self, context: &[&str], next: &str) -> f64 {
        let Some(ctx) = self.ids(context) else {
            return 0.0;
        };
        match self.tables.get(ctx.len()).and_then(|t| t.get(&ctx)) {
            Some(c) => self.count(context, next) as f64 / c.total as f64,
            None => 0.0,
        }
    }

    fn ids(&self, tokens: &[&str]) -> Option<Vec<u32>> {
        tokens.iter().map(|t| self.vocab.id(t)).collect()
    }

    fn history(&self, request: &ScoreRequest) -> Vec<u32> {
        let keep = self.order - 1;
        let mut history: Vec<u32> = request
            .condition
            .iter()
            .map(|t| self.vocab.id_or_unk(t))
            .collect();
        history.push(self.vocab.id_or_unk(SEP));
        history.push(self.vocab.id_or_unk(BOS));
        history.extend(request.prefix.iter().map(|t| self.vocab.id_or_unk(t)));
        let start = history.len().saturating_sub(keep);
        history.split_off(start)
    }

    /// Unnormalized backoff scores for every vocabulary entry given `context`.
    fn backoff_scores(&self, context: &[u32]) -> Vec<f64> {
        let v = self.vocab.len();
        let mut scores = vec![f64::NAN; v];
        let mut weight = 1.0;
        for k in (1..=context.len()).rev() {
            if let Some(counts) = self.tables[k].get(&context[context.len() - k..]) {
                for (&id, &c) in &counts.next {
                    let slot = &mut scores[id as usize];
                    if slot.is_nan() {
                        *slot = weight * c as f64 / counts.total as f64;
                    }
                }
            }
            weight *= BACKOFF_FACTOR;
        }
        let unigrams = &self.tables[0][&Vec::new()];
        let denom = (unigrams.total + v as u64) as f64;
        for (id, slot) in scores.iter_mut().enumerate() {
            if slot.is_nan() {
                let c = unigrams.next.get(&(id as u32)).copied().unwrap_or(0);
                *slot = weight * (c + 1) as f64 / denom;
            }
        }
        scores
    }
}

impl Scorer for NGramModel {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScoreError> {
        request.check()?;
        let scores = self.backoff_scores(&self.history(request));
        let log_total = scores.iter().sum::<f64>().ln();
        let logprobs = scores.iter().map(|s| s.ln() - log_total).collect();
        Ok(ScoreResponse::new(self.vocab.tokens().to_vec(), logprobs, false))
    }
}
