//! Selection of finished-rollout turns for the training buffer.
//!
//! Valid-format rollouts contribute every turn of every agent that stayed
//! within its turn and context limits; over-limit agents are left out whole.
//! Invalid-format rollouts contribute the lead's final turn, plus the turns
//! of over-limit agents: only the looping turns when a repetition loop is
//! detected, otherwise all of them.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orchestrator::{reconstruct_states, AgentTrajectory, Limits, Rollout, TokenRecord};
use crate::policy::{state_hash, Message};
use crate::prompts::PromptSet;
use crate::reward::RewardBreakdown;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RepetitionConfig {
    pub window: usize,
    pub coverage: f64,
    pub max_ngram: usize,
}

impl Default for RepetitionConfig {
    fn default() -> Self {
        Self {
            window: 512,
            coverage: 0.8,
            max_ngram: 50,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BufferError {
    #[error("repetition config needs window >= 1, max_ngram >= 1 and coverage in (0, 1]")]
    BadRepetitionConfig,
    #[error("rollout {rollout} agent {agent} turn {turn}: stored state hash does not match the rebuilt state")]
    StateMismatch {
        rollout: String,
        agent: usize,
        turn: u32,
    },
}

impl RepetitionConfig {
    pub fn validate(&self) -> Result<(), BufferError> {
        if self.window == 0 || self.max_ngram == 0 || !(self.coverage > 0.0 && self.coverage <= 1.0)
        {
            return Err(BufferError::BadRepetitionConfig);
        }
        Ok(())
    }
}

/// Longest stretch of whole back-to-back copies (at least two) of one
/// n-gram, `n <= max_ngram`.
pub fn longest_repeat(tokens: &[u32], max_ngram: usize) -> usize {
    let mut best = 0;
    for n in 1..=max_ngram.min(tokens.len() / 2) {
        // run = count of consecutive i with tokens[i] == tokens[i + n]
        let mut run = 0usize;
        for i in 0..tokens.len() - n {
            if tokens[i] == tokens[i + n] {
                run += 1;
                if run >= n {
                    best = best.max((run + n) / n * n);
                }
            } else {
                run = 0;
            }
        }
    }
    best
}

/// True iff the last `window` tokens are at least `coverage` covered by one
/// repeated n-gram. Shorter sequences are measured against the full window.
pub fn detect_repetition(tokens: &[u32], cfg: &RepetitionConfig) -> bool {
    let tail = &tokens[tokens.len().saturating_sub(cfg.window)..];
    let covered = longest_repeat(tail, cfg.max_ngram);
    covered > 0 && covered as f64 >= cfg.coverage * cfg.window as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InclusionReason {
    Normal,
    FormatPenalty,
    RepetitionPenalty,
    OverflowPenalty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub rollout_id: String,
    pub agent_index: usize,
    pub turn: u32,
    pub state: Vec<Message>,
    pub state_hash: String,
    pub output_text: String,
    pub tokens: Vec<TokenRecord>,
    pub inclusion_reason: InclusionReason,
    pub reward: f64,
    pub config_hash: String,
}

/// Exceeded its turn budget or context window, by status or by the record.
pub fn over_limit(agent: &AgentTrajectory, limits: &Limits) -> bool {
    agent.status.is_over_limit()
        || agent.turns.len() > limits.max_turns(agent.role) as usize
        || agent
            .turns
            .iter()
            .any(|t| t.state_tokens + t.tokens.len() > limits.max_context_tokens)
}

fn sample(
    rollout: &Rollout,
    reward: &RewardBreakdown,
    agent: &AgentTrajectory,
    states: &[Vec<Message>],
    t: usize,
    reason: InclusionReason,
) -> Result<TrainingSample, BufferError> {
    let turn = &agent.turns[t];
    let state = states[t].clone();
    let hash = state_hash(&state);
    if hash != turn.state_hash {
        return Err(BufferError::StateMismatch {
            rollout: rollout.id(),
            agent: agent.agent_index,
            turn: turn.turn,
        });
    }
    Ok(TrainingSample {
        rollout_id: rollout.id(),
        agent_index: agent.agent_index,
        turn: turn.turn,
        state,
        state_hash: hash,
        output_text: turn.output_text.clone(),
        tokens: turn.tokens.clone(),
        inclusion_reason: reason,
        reward: reward.total,
        config_hash: rollout.metadata.provenance.config_hash.clone(),
    })
}

/// Buffer samples for one rollout, in agent then turn order.
///
/// Agents that ended on a backend failure contribute nothing, and a rollout
/// whose lead failed that way contributes nothing at all.
pub fn collect(
    rollout: &Rollout,
    reward: &RewardBreakdown,
    limits: &Limits,
    prompts: &PromptSet,
    repetition: &RepetitionConfig,
) -> Result<Vec<TrainingSample>, BufferError> {
    let lead = rollout.lead();
    if lead.status.is_infra_failure() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for agent in &rollout.agents {
        if agent.status.is_infra_failure() || agent.turns.is_empty() {
            continue;
        }
        let states = reconstruct_states(agent, prompts);
        let over = over_limit(agent, limits);
        let mut picks: Vec<(usize, InclusionReason)> = Vec::new();
        if reward.format_valid {
            if !over {
                picks.extend((0..agent.turns.len()).map(|t| (t, InclusionReason::Normal)));
            }
        } else {
            if over {
                let looping: Vec<usize> = (0..agent.turns.len())
                    .filter(|&t| {
                        let ids: Vec<u32> = agent.turns[t].tokens.iter().map(|r| r.id).collect();
                        detect_repetition(&ids, repetition)
                    })
                    .collect();
                if looping.is_empty() {
                    picks.extend(
                        (0..agent.turns.len()).map(|t| (t, InclusionReason::OverflowPenalty)),
                    );
                } else {
                    picks.extend(
                        looping
                            .into_iter()
                            .map(|t| (t, InclusionReason::RepetitionPenalty)),
                    );
                }
            }
            if agent.agent_index == 0 {
                let last = agent.turns.len() - 1;
                if !picks.iter().any(|&(t, _)| t == last) {
                    picks.push((last, InclusionReason::FormatPenalty));
                }
            }
        }
        for (t, reason) in picks {
            out.push(sample(rollout, reward, agent, &states, t, reason)?);
        }
    }
    Ok(out)
}

pub fn write_jsonl(samples: &[TrainingSample], mut w: impl Write) -> std::io::Result<()> {
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Append-only buffer file.
pub struct BufferWriter {
    file: std::io::BufWriter<std::fs::File>,
}

impl BufferWriter {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        Ok(Self {
            file: std::io::BufWriter::new(file),
        })
    }

    pub fn append(&mut self, samples: &[TrainingSample]) -> std::io::Result<()> {
        write_jsonl(samples, &mut self.file)?;
        self.file.flush()
    }
}
