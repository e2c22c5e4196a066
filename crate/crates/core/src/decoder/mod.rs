//! Greedy, beam and diverse beam decoding over any [`Scorer`].
//!
//! Diverse beam search ranks each parent's expansions by their token log-probability
//! `θ`, keeps the parent's best `B`, and penalizes the `k`-th of them by `γ·k` when
//! beams compete for the `B` slots:
//!
//! ```text
//! selection score = Θ(parent) + θ(token) − γ·k        k ∈ {1..B}
//! ```
//!
//! A parent's runner-up therefore has to beat another parent's best child by more than
//! `γ` to survive, which spreads the beam over different prefixes. With `γ = 0` this is
//! plain beam search, and with `B = 1` plain beam search is greedy decoding.
//!
//! Beams that emit `</s>` are frozen and keep competing with their last score. Ties are
//! broken by the token sequence in lexicographic order, so decoding is deterministic.

mod oracle;

use std::cmp::Ordering;

use thiserror::Error;

use crate::entity_ops::ConditionSequence;
use crate::scorer::{ScoreError, ScoreRequest, ScoreResponse, Scorer, EOS};

pub use oracle::{exhaustive_best, oracle_decode, ORACLE_LIMIT};

pub const DEFAULT_BEAM_WIDTH: usize = 3;
pub const DEFAULT_GAMMA: f64 = 10.0;
pub const DEFAULT_MAX_LEN: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecodeError {
    #[error("invalid decode config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    ScorerFailure(#[from] ScoreError),
    #[error("scorer returned no usable token at step {step}")]
    EmptyDistribution { step: usize },
    #[error("search space of {size} sequences exceeds the oracle limit")]
    TooLarge { size: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Greedy,
    Beam,
    DiverseBeam,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DecodeConfig {
    pub beam_width: usize,
    pub gamma: f64,
    pub max_len: usize,
    pub mode: DecodeMode,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_width: DEFAULT_BEAM_WIDTH,
            gamma: DEFAULT_GAMMA,
            max_len: DEFAULT_MAX_LEN,
            mode: DecodeMode::DiverseBeam,
        }
    }
}

impl DecodeConfig {
    pub fn greedy(max_len: usize) -> Self {
        DecodeConfig {
            beam_width: 1,
            gamma: 0.0,
            max_len,
            mode: DecodeMode::Greedy,
        }
    }

    pub fn beam(beam_width: usize, max_len: usize) -> Self {
        DecodeConfig {
            beam_width,
            gamma: 0.0,
            max_len,
            mode: DecodeMode::Beam,
        }
    }

    pub fn diverse(beam_width: usize, gamma: f64, max_len: usize) -> Self {
        DecodeConfig {
            beam_width,
            gamma,
            max_len,
            mode: DecodeMode::DiverseBeam,
        }
    }

    /// Beam width actually used: greedy always runs with one beam.
    pub fn width(&self) -> usize {
        match self.mode {
            DecodeMode::Greedy => 1,
            _ => self.beam_width,
        }
    }

    /// Penalty weight actually used: only diverse beam search applies it.
    pub fn penalty(&self) -> f64 {
        match self.mode {
            DecodeMode::DiverseBeam => self.gamma,
            _ => 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.beam_width == 0 {
            return Err(DecodeError::InvalidConfig("beam width must be at least 1".into()));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(DecodeError::InvalidConfig(format!(
                "gamma must be finite and non-negative, got {}",
                self.gamma
            )));
        }
        if self.max_len == 0 {
            return Err(DecodeError::InvalidConfig("max_len must be at least 1".into()));
        }
        Ok(())
    }
}

/// A partial or finished hypothesis. `tokens` never includes `</s>`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamState {
    pub tokens: Vec<String>,
    /// Sum of token log-probabilities along the path.
    pub raw_score: f64,
    /// Score the beam was selected with: `raw_score − γ·k` for its last rank `k`.
    pub adj_score: f64,
    pub finished: bool,
}

pub type Hypothesis = BeamState;

impl BeamState {
    pub fn root() -> Self {
        BeamState {
            tokens: Vec::new(),
            raw_score: 0.0,
            adj_score: 0.0,
            finished: false,
        }
    }

    /// Child reached by `token` with log-probability `theta` at sibling rank `rank`.
    fn child(&self, token: &str, theta: f64, rank: usize, gamma: f64) -> BeamState {
        let raw_score = self.raw_score + theta;
        let mut tokens = self.tokens.clone();
        let finished = token == EOS;
        if !finished {
            tokens.push(token.to_owned());
        }
        BeamState {
            tokens,
            raw_score,
            adj_score: raw_score - gamma * rank as f64,
            finished,
        }
    }
}

/// Selection order: higher adjusted score first, then token sequence, then open before finished.
pub fn beam_order(a: &BeamState, b: &BeamState) -> Ordering {
    b.adj_score
        .total_cmp(&a.adj_score)
        .then_with(|| a.tokens.cmp(&b.tokens))
        .then_with(|| a.finished.cmp(&b.finished))
}

/// Tokens of a response with finite log-probability, best first (ties by token).
pub fn ranked_tokens(response: &ScoreResponse) -> Vec<(&str, f64)> {
    let mut ranked: Vec<(&str, f64)> = response
        .iter()
        .filter(|(_, lp)| *lp > f64::NEG_INFINITY)
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamSet {
    pub beams: Vec<BeamState>,
}

impl BeamSet {
    pub fn initial() -> Self {
        BeamSet {
            beams: vec![BeamState::root()],
        }
    }

    pub fn all_finished(&self) -> bool {
        self.beams.iter().all(|b| b.finished)
    }
}

fn query<S: Scorer + ?Sized>(
    scorer: &S,
    condition: &ConditionSequence,
    prefix: &[String],
) -> Result<ScoreResponse, DecodeError> {
    Ok(scorer.score(&ScoreRequest::new(condition, prefix))?)
}

/// Picks the most likely token at every step.
pub fn decode_greedy<S: Scorer + ?Sized>(
    scorer: &S,
    condition: &ConditionSequence,
    cfg: &DecodeConfig,
) -> Result<Hypothesis, DecodeError> {
    cfg.validate()?;
    let mut state = BeamState::root();
    for step in 0..cfg.max_len {
        let response = query(scorer, condition, &state.tokens)?;
        let &(token, theta) = ranked_tokens(&response)
            .first()
            .ok_or(DecodeError::EmptyDistribution { step })?;
        state = state.child(token, theta, 1, 0.0);
        if state.finished {
            break;
        }
    }
    Ok(state)
}

/// One expansion step: every open beam proposes its `B` best continuations, finished
/// beams carry over, and the `B` best by adjusted score survive.
pub fn step_expand<S: Scorer + ?Sized>(
    beams: &BeamSet,
    scorer: &S,
    condition: &ConditionSequence,
    cfg: &DecodeConfig,
) -> Result<BeamSet, DecodeError> {
    let width = cfg.width();
    let gamma = cfg.penalty();
    let mut candidates = Vec::with_capacity(beams.beams.len() * width);
    for beam in &beams.beams {
        if beam.finished {
            candidates.push(beam.clone());
            continue;
        }
        let response = query(scorer, condition, &beam.tokens)?;
        let ranked = ranked_tokens(&response);
        if ranked.is_empty() {
            return Err(DecodeError::EmptyDistribution {
                step: beam.tokens.len(),
            });
        }
        candidates.extend(
            ranked
                .iter()
                .take(width)
                .enumerate()
                .map(|(i, &(token, theta))| beam.child(token, theta, i + 1, gamma)),
        );
    }
    candidates.sort_by(beam_order);
    candidates.truncate(width);
    Ok(BeamSet { beams: candidates })
}

/// Runs the configured search for at most `max_len` steps (the end token uses a step).
///
/// Returns at most `B` hypotheses in selection order. Hypotheses that never produced
/// `</s>` within `max_len` come back with `finished == false`.
pub fn decode<S: Scorer + ?Sized>(
    scorer: &S,
    condition: &ConditionSequence,
    cfg: &DecodeConfig,
) -> Result<Vec<Hypothesis>, DecodeError> {
    cfg.validate()?;
    if cfg.mode == DecodeMode::Greedy {
        return decode_greedy(scorer, condition, cfg).map(|h| vec![h]);
    }
    let mut beams = BeamSet::initial();
    for _ in 0..cfg.max_len {
        if beams.all_finished() {
            break;
        }
        beams = step_expand(&beams, scorer, condition, cfg)?;
    }
    Ok(beams.beams)
}
