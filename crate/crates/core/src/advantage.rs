//! Group-relative advantages and the multi-agent clipped surrogate.
//!
//! Every token of rollout `i` shares the advantage `(R_i - mean) / std`. Token
//! weights average first over an agent's output tokens (across all its turns)
//! and then over the agents of the rollout, so each rollout carries `1/G` of
//! the total weight regardless of how many subagents it spawned.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orchestrator::{reconstruct_states, Rollout};
use crate::policy::{Policy, PolicyError};
use crate::prompts::PromptSet;

/// Groups whose reward std is at or below this get all-zero advantages.
pub const DEGENERATE_STD: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdvantageError {
    #[error("group has {0} rollouts, need at least 2")]
    GroupTooSmall(usize),
    #[error("rollout {0} has no agent with generated tokens")]
    EmptyRollout(usize),
    #[error("rollout {rollout} agent {agent} turn {turn} token {token} lacks logprob_new")]
    MissingLogprob {
        rollout: usize,
        agent: usize,
        turn: u32,
        token: usize,
    },
    #[error("advantages cover {advantages} rollouts but the group has {rollouts}")]
    SizeMismatch { advantages: usize, rollouts: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipRange {
    pub eps_low: f64,
    pub eps_high: f64,
}

impl Default for ClipRange {
    fn default() -> Self {
        Self {
            eps_low: 0.2,
            eps_high: 0.28,
        }
    }
}

impl ClipRange {
    pub fn lower(&self) -> f64 {
        1.0 - self.eps_low
    }

    pub fn upper(&self) -> f64 {
        1.0 + self.eps_high
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAdvantages {
    pub rewards: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub advantages: Vec<f64>,
    pub degenerate: bool,
}

pub fn normalize_group(rewards: &[f64]) -> Result<GroupAdvantages, AdvantageError> {
    let g = rewards.len();
    if g < 2 {
        return Err(AdvantageError::GroupTooSmall(g));
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g as f64;
    let std = var.sqrt();
    let degenerate = std <= DEGENERATE_STD;
    let advantages = if degenerate {
        vec![0.0; g]
    } else {
        rewards.iter().map(|r| (r - mean) / std).collect()
    };
    Ok(GroupAdvantages {
        rewards: rewards.to_vec(),
        mean,
        std,
        advantages,
        degenerate,
    })
}

/// Output-token counts of one rollout, indexed `[agent][turn]`.
pub type RolloutShape = Vec<Vec<usize>>;

pub fn rollout_shape(rollout: &Rollout) -> RolloutShape {
    rollout
        .agents
        .iter()
        .map(|a| a.turns.iter().map(|t| t.tokens.len()).collect())
        .collect()
}

/// Per-token weights. Within an agent every token has the same weight, so the
/// map stores one value per `(rollout, agent)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenWeights {
    pub group_size: usize,
    /// `[rollout][agent]`; `None` for agents dropped for having no tokens.
    pub per_token: Vec<Vec<Option<f64>>>,
    /// Agents counted toward `N_i` per rollout.
    pub active_agents: Vec<usize>,
    pub dropped: Vec<(usize, usize)>,
}

impl TokenWeights {
    pub fn weight(&self, rollout: usize, agent: usize) -> f64 {
        self.per_token
            .get(rollout)
            .and_then(|r| r.get(agent))
            .copied()
            .flatten()
            .unwrap_or(0.0)
    }
}

pub fn token_weights(group: &[Rollout]) -> Result<TokenWeights, AdvantageError> {
    let shapes: Vec<RolloutShape> = group.iter().map(rollout_shape).collect();
    token_weights_from_shapes(&shapes)
}

pub fn token_weights_from_shapes(shapes: &[RolloutShape]) -> Result<TokenWeights, AdvantageError> {
    let g = shapes.len() as f64;
    let mut per_token = Vec::with_capacity(shapes.len());
    let mut active_agents = Vec::with_capacity(shapes.len());
    let mut dropped = Vec::new();
    for (i, agents) in shapes.iter().enumerate() {
        let totals: Vec<usize> = agents.iter().map(|turns| turns.iter().sum()).collect();
        let n_active = totals.iter().filter(|&&n| n > 0).count();
        if n_active == 0 {
            return Err(AdvantageError::EmptyRollout(i));
        }
        let row = totals
            .iter()
            .enumerate()
            .map(|(a, &n)| {
                if n == 0 {
                    log::warn!("rollout {i} agent {a} generated no tokens; dropped from weighting");
                    dropped.push((i, a));
                    None
                } else {
                    Some(1.0 / (g * n_active as f64 * n as f64))
                }
            })
            .collect();
        per_token.push(row);
        active_agents.push(n_active);
    }
    Ok(TokenWeights {
        group_size: shapes.len(),
        per_token,
        active_agents,
        dropped,
    })
}

pub fn clipped_surrogate(ratio: f64, adv: f64, eps_low: f64, eps_high: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps_low, 1.0 + eps_high);
    (ratio * adv).min(clipped * adv)
}

/// True when the clipped branch is strictly smaller than the unclipped one.
pub fn clip_active(ratio: f64, adv: f64, clip: ClipRange) -> bool {
    ratio.clamp(clip.lower(), clip.upper()) * adv < ratio * adv
}

/// d/d(logprob_new) of the surrogate, with `ratio = exp(logprob_new - logprob_old)`.
/// Zero where the clipped branch is active.
pub fn surrogate_grad(ratio: f64, adv: f64, clip: ClipRange) -> f64 {
    if clip_active(ratio, adv, clip) {
        0.0
    } else {
        ratio * adv
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenTerm {
    pub rollout: usize,
    pub agent: usize,
    pub turn: u32,
    pub token: usize,
    pub weight: f64,
    pub advantage: f64,
    pub ratio: f64,
    pub term: f64,
    /// `weight * d(surrogate)/d(logprob_new)`.
    pub grad: f64,
    pub clipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    /// Value to maximize; a minimizing trainer negates it.
    pub objective: f64,
    pub clip_fraction: f64,
    pub weighted_tokens: usize,
    pub terms: Vec<TokenTerm>,
}

pub fn group_objective(
    group: &[Rollout],
    advantages: &GroupAdvantages,
    clip: ClipRange,
) -> Result<ObjectiveReport, AdvantageError> {
    if advantages.advantages.len() != group.len() {
        return Err(AdvantageError::SizeMismatch {
            advantages: advantages.advantages.len(),
            rollouts: group.len(),
        });
    }
    let weights = token_weights(group)?;
    let mut terms = Vec::new();
    let mut objective = 0.0;
    let mut clipped_count = 0usize;
    for (i, rollout) in group.iter().enumerate() {
        let adv = advantages.advantages[i];
        for (a, agent) in rollout.agents.iter().enumerate() {
            let w = match weights.per_token[i][a] {
                Some(w) => w,
                None => continue,
            };
            for turn in &agent.turns {
                for (j, tok) in turn.tokens.iter().enumerate() {
                    let new = tok.logprob_new.ok_or(AdvantageError::MissingLogprob {
                        rollout: i,
                        agent: a,
                        turn: turn.turn,
                        token: j,
                    })?;
                    let ratio = (new - tok.logprob_old).exp();
                    let term = w * clipped_surrogate(ratio, adv, clip.eps_low, clip.eps_high);
                    let clipped = clip_active(ratio, adv, clip);
                    clipped_count += usize::from(clipped);
                    objective += term;
                    terms.push(TokenTerm {
                        rollout: i,
                        agent: a,
                        turn: turn.turn,
                        token: j,
                        weight: w,
                        advantage: adv,
                        ratio,
                        term,
                        grad: w * surrogate_grad(ratio, adv, clip),
                        clipped,
                    });
                }
            }
        }
    }
    let weighted_tokens = terms.len();
    Ok(ObjectiveReport {
        objective,
        clip_fraction: if weighted_tokens == 0 {
            0.0
        } else {
            clipped_count as f64 / weighted_tokens as f64
        },
        weighted_tokens,
        terms,
    })
}

/// Fills `logprob_new` on every token by re-scoring each recorded output
/// against the state it was generated from.
pub fn rescore_rollouts(
    group: &mut [Rollout],
    policy: &dyn Policy,
    prompts: &PromptSet,
) -> Result<(), PolicyError> {
    for rollout in group.iter_mut() {
        for agent in rollout.agents.iter_mut() {
            let states = reconstruct_states(agent, prompts);
            for (turn, messages) in agent.turns.iter_mut().zip(&states) {
                let lps = policy.rescore(messages, &turn.output_text, &turn.tokens)?;
                if lps.len() != turn.tokens.len() {
                    return Err(PolicyError::LengthMismatch {
                        expected: turn.tokens.len(),
                        got: lps.len(),
                    });
                }
                for (tok, lp) in turn.tokens.iter_mut().zip(lps) {
                    tok.logprob_new = Some(lp);
                }
            }
        }
    }
    Ok(())
}
