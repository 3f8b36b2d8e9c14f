//! Multi-agent rollouts: a lead agent that delegates through
//! `create_sub_agents`, and subagents that work with `search` and `access`
//! in isolated contexts.

mod context;
mod runner;
mod toolcall;
mod trajectory;

pub use context::{
    aggregate_reports, build_messages, build_state, reconstruct_states, state_tokens, strip_think,
    system_prompt_id, wrap_tool_response, ContextOverflow, SubagentReport,
};
pub use runner::{
    run_group, run_rollout, sample_key, RolloutEnv, RolloutEvent, RolloutObserver, Schedule,
};
pub use toolcall::{extract_tool_calls, render_tool_call, ParseFailure};
pub use trajectory::{
    AgentKind, AgentStatus, AgentTrajectory, FinishReason, Outcome, Rollout, RolloutMetadata,
    SubAgentTask, TokenRecord, ToolCall, Turn,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    pub max_lead_turns: u32,
    pub max_sub_turns: u32,
    pub max_subagents_per_turn: usize,
    pub max_parallel_tool_calls: usize,
    pub max_context_tokens: usize,
    /// Consecutive unparseable tool calls before the agent is stopped.
    pub max_parse_failures: u32,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_lead_turns: 10,
            max_sub_turns: 20,
            max_subagents_per_turn: 10,
            max_parallel_tool_calls: 5,
            max_context_tokens: 32768,
            max_parse_failures: 3,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("limit '{0}' must be positive")]
pub struct LimitsError(pub &'static str);

impl Limits {
    pub fn validate(&self) -> Result<(), LimitsError> {
        let checks = [
            ("max_lead_turns", self.max_lead_turns as usize),
            ("max_sub_turns", self.max_sub_turns as usize),
            ("max_subagents_per_turn", self.max_subagents_per_turn),
            ("max_parallel_tool_calls", self.max_parallel_tool_calls),
            ("max_context_tokens", self.max_context_tokens),
            ("max_parse_failures", self.max_parse_failures as usize),
        ];
        match checks.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(LimitsError(name)),
            None => Ok(()),
        }
    }

    pub fn max_turns(&self, role: AgentKind) -> u32 {
        match role {
            AgentKind::Lead => self.max_lead_turns,
            AgentKind::Subagent => self.max_sub_turns,
        }
    }
}
