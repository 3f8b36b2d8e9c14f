//! Outcome reward for a finished rollout.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{item_f1, UniqueKey};
use crate::orchestrator::Rollout;
use crate::tabletext::{parse_answer, Table};

#[derive(Debug, Error, PartialEq)]
pub enum RewardConfigError {
    #[error("len_threshold ({0}) must be below len_max ({1})")]
    BadLengthWindow(usize, usize),
    #[error("reward bonuses and alpha_len must be non-negative")]
    NegativeBonus,
}

/// Which tokens count toward the length penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthTarget {
    #[default]
    LeadFinalTurn,
    LeadTotal,
    AllAgentsTotal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub r_format_bonus: f64,
    pub r_tool_bonus: f64,
    pub alpha_len: f64,
    pub len_threshold: usize,
    pub len_max: usize,
    pub length_target: LengthTarget,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            r_format_bonus: 0.1,
            r_tool_bonus: 0.05,
            alpha_len: 0.1,
            len_threshold: 3000,
            len_max: 5000,
            length_target: LengthTarget::LeadFinalTurn,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardConfigError> {
        if self.len_threshold >= self.len_max {
            return Err(RewardConfigError::BadLengthWindow(
                self.len_threshold,
                self.len_max,
            ));
        }
        if self.r_format_bonus < 0.0 || self.r_tool_bonus < 0.0 || self.alpha_len < 0.0 {
            return Err(RewardConfigError::NegativeBonus);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_ans: f64,
    pub r_format: f64,
    pub r_tool: f64,
    pub r_len: f64,
    pub total: f64,
    pub format_valid: bool,
    pub length_used: usize,
}

/// Valid iff the text holds a ```` ```markdown ```` block that parses strictly.
pub fn check_format(final_text: &str) -> (bool, Option<Table>) {
    match parse_answer(final_text) {
        Some(t) => (true, Some(t)),
        None => (false, None),
    }
}

pub fn length_penalty(length: usize, cfg: &RewardConfig) -> f64 {
    if length <= cfg.len_threshold {
        return 0.0;
    }
    let span = (cfg.len_max - cfg.len_threshold) as f64;
    let frac = ((length - cfg.len_threshold) as f64 / span).clamp(0.0, 1.0);
    cfg.alpha_len * frac
}

pub fn penalized_length(rollout: &Rollout, target: LengthTarget) -> usize {
    let lead = rollout.lead();
    match target {
        LengthTarget::LeadFinalTurn => lead.final_turn().map_or(0, |t| t.tokens.len()),
        LengthTarget::LeadTotal => lead.output_token_count(),
        LengthTarget::AllAgentsTotal => rollout.agents.iter().map(|a| a.output_token_count()).sum(),
    }
}

/// Assembles the reward from its parts. Invalid format zeroes the total;
/// the tool and length components are still reported.
pub fn combine(
    answer_f1: f64,
    format_valid: bool,
    used_access: bool,
    length: usize,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let r_tool = if used_access { cfg.r_tool_bonus } else { 0.0 };
    let r_len = length_penalty(length, cfg);
    if !format_valid {
        return RewardBreakdown {
            r_ans: 0.0,
            r_format: 0.0,
            r_tool,
            r_len,
            total: 0.0,
            format_valid,
            length_used: length,
        };
    }
    let r_format = cfg.r_format_bonus;
    RewardBreakdown {
        r_ans: answer_f1,
        r_format,
        r_tool,
        r_len,
        total: answer_f1 + r_format + r_tool - r_len,
        format_valid,
        length_used: length,
    }
}

pub fn compute_reward(
    rollout: &Rollout,
    gt: &Table,
    key: &UniqueKey,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let (valid, table) = check_format(&rollout.outcome.final_answer_text);
    let answer_f1 = table.as_ref().map_or(0.0, |t| item_f1(t, gt, key).f1);
    combine(
        answer_f1,
        valid,
        rollout.any_access_call(),
        penalized_length(rollout, cfg.length_target),
        cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_penalty_worked_values() {
        let cfg = RewardConfig::default();
        assert_eq!(length_penalty(2000, &cfg), 0.0);
        assert_eq!(length_penalty(3000, &cfg), 0.0);
        assert_eq!(length_penalty(4000, &cfg), 0.05);
        assert_eq!(length_penalty(5000, &cfg), 0.1);
        assert_eq!(length_penalty(9999, &cfg), 0.1);
    }

    #[test]
    fn combine_worked_values() {
        let cfg = RewardConfig::default();
        assert_eq!(combine(0.5, true, true, 2000, &cfg).total, 0.65);
        assert_eq!(combine(1.0, true, false, 0, &cfg).total, 1.1);
        let invalid = combine(1.0, false, true, 9999, &cfg);
        assert_eq!(invalid.total, 0.0);
        assert!(!invalid.format_valid);
    }

    #[test]
    fn format_checks() {
        assert!(!check_format("I could not find it.").0);
        let ragged = "```markdown\n| A | B |\n|---|---|\n| 1 |\n```";
        assert!(!check_format(ragged).0);
        let ok = "```markdown\n| A | B |\n|---|---|\n| 1 | 2 |\n```";
        let (valid, table) = check_format(ok);
        assert!(valid);
        assert_eq!(table.unwrap().num_rows(), 1);
    }

    #[test]
    fn empty_table_answer_scores_zero() {
        let cfg = RewardConfig::default();
        let r = combine(0.0, true, false, 10, &cfg);
        assert_eq!(r.total, 0.1);
    }

    #[test]
    fn config_validation() {
        let mut cfg = RewardConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.len_max = cfg.len_threshold;
        assert!(cfg.validate().is_err());
        let cfg = RewardConfig {
            r_tool_bonus: -1.0,
            ..Default::default()
        };
        assert_eq!(cfg.validate(), Err(RewardConfigError::NegativeBonus));
    }
}
