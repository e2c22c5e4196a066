//! Exhaustive reference search for small instances.
//!
//! The whole hypothesis tree up to a horizon is materialized first. Sibling ranks come
//! from pairwise comparison over the tree, and each step keeps every candidate beaten
//! by fewer than `B` others. Nothing is shared with the incremental decoder except the
//! ordering relation, so the two can check each other.

use super::{beam_order, BeamState, DecodeConfig, DecodeError, Hypothesis};
use crate::entity_ops::ConditionSequence;
use crate::scorer::{ScoreRequest, Scorer, EOS};

/// Largest `|V|^horizon` the oracle will enumerate.
pub const ORACLE_LIMIT: f64 = 1e6;

struct Node {
    state: BeamState,
    token: String,
    theta: f64,
    depth: usize,
    /// 1-based position among siblings by `θ` (ties by token).
    rank: usize,
    children: Vec<usize>,
}

fn enumerate_tree<S: Scorer + ?Sized>(
    scorer: &S,
    condition: &ConditionSequence,
    horizon: usize,
) -> Result<Vec<Node>, DecodeError> {
    let mut nodes = vec![Node {
        state: BeamState::root(),
        token: String::new(),
        theta: 0.0,
        depth: 0,
        rank: 1,
        children: Vec::new(),
    }];
    let mut checked = false;
    let mut next = 0;
    while next < nodes.len() {
        let id = next;
        next += 1;
        if nodes[id].state.finished || nodes[id].depth == horizon {
            continue;
        }
        let response = scorer.score(&ScoreRequest::new(condition, &nodes[id].state.tokens))?;
        if !checked {
            let size = (response.len() as f64).powi(horizon as i32);
            if size > ORACLE_LIMIT {
                return Err(DecodeError::TooLarge { size });
            }
            checked = true;
        }
        for (token, theta) in response.iter() {
            if theta == f64::NEG_INFINITY {
                continue;
            }
            let parent = &nodes[id].state;
            let mut tokens = parent.tokens.clone();
            let finished = token == EOS;
            if !finished {
                tokens.push(token.to_owned());
            }
            let child = Node {
                state: BeamState {
                    tokens,
                    raw_score: parent.raw_score + theta,
                    adj_score: 0.0,
                    finished,
                },
                token: token.to_owned(),
                theta,
                depth: nodes[id].depth + 1,
                rank: 0,
                children: Vec::new(),
            };
            let child_id = nodes.len();
            nodes.push(child);
            nodes[id].children.push(child_id);
        }
        if nodes[id].children.is_empty() {
            return Err(DecodeError::EmptyDistribution {
                step: nodes[id].depth,
            });
        }
    }

    for id in 0..nodes.len() {
        let children = nodes[id].children.clone();
        for &c in &children {
            let beaten_by = children
                .iter()
                .filter(|&&s| {
                    let (a, b) = (&nodes[s], &nodes[c]);
                    a.theta > b.theta || (a.theta == b.theta && a.token < b.token)
                })
                .count();
            nodes[c].rank = beaten_by + 1;
        }
    }
    Ok(nodes)
}

/// Reference result for [`super::decode`] with `max_len == horizon`.
///
/// Fails with [`DecodeError::TooLarge`] when `|V|^horizon` exceeds [`ORACLE_LIMIT`].
pub fn oracle_decode<S: Scorer + ?Sized>(
    scorer: &S,
    condition: &ConditionSequence,
    cfg: &DecodeConfig,
    horizon: usize,
) -> Result<Vec<Hypothesis>, DecodeError> {
    cfg.validate()?;
    let width = cfg.width();
    let gamma = cfg.penalty();
    let mut nodes = enumerate_tree(scorer, condition, horizon)?;

    for node in nodes.iter_mut().skip(1) {
        node.state.adj_score = node.state.raw_score - gamma * node.rank as f64;
    }

    let mut selected = vec![0usize];
    for _ in 0..horizon {
        if selected.iter().all(|&i| nodes[i].state.finished) {
            break;
        }
        let pool: Vec<usize> = selected
            .iter()
            .flat_map(|&i| {
                if nodes[i].state.finished {
                    vec![i]
                } else {
                    nodes[i]
                        .children
                        .iter()
                        .copied()
                        .filter(|&c| nodes[c].rank <= width)
                        .collect()
                }
            })
            .collect();
        let mut kept: Vec<(usize, usize)> = pool
            .iter()
            .map(|&c| {
                let beaten_by = pool
                    .iter()
                    .filter(|&&d| beam_order(&nodes[d].state, &nodes[c].state).is_lt())
                    .count();
                (beaten_by, c)
            })
            .filter(|&(beaten_by, _)| beaten_by < width)
            .collect();
        kept.sort_unstable();
        selected = kept.into_iter().map(|(_, c)| c).collect();
    }

    Ok(selected.into_iter().map(|i| nodes[i].state.clone()).collect())
}

/// Highest raw-score sequence over every path that ends in `</s>` within `horizon`
/// steps or reaches `horizon` tokens. Adjusted score equals raw score.
pub fn exhaustive_best<S: Scorer + ?Sized>(
    scorer: &S,
    condition: &ConditionSequence,
    horizon: usize,
) -> Result<Hypothesis, DecodeError> {
    let nodes = enumerate_tree(scorer, condition, horizon)?;
    nodes
        .into_iter()
        .skip(1)
        .filter(|n| n.state.finished || n.depth == horizon)
        .map(|n| BeamState {
            adj_score: n.state.raw_score,
            ..n.state
        })
        .min_by(beam_order)
        .ok_or(DecodeError::EmptyDistribution { step: 0 })
}
