//! Recorded rollouts. These types are also the trajectory JSONL wire format.

use serde::{Deserialize, Serialize};

use crate::config::Provenance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub id: u32,
    pub logprob_old: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprob_new: Option<f64>,
}

impl TokenRecord {
    pub fn new(id: u32, logprob_old: f64) -> Self {
        Self {
            id,
            logprob_old,
            logprob_new: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Lead,
    Subagent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubAgentTask {
    pub prompt: String,
}

/// A tool invocation in its wire shape: `{"name": ..., "arguments": {...}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", content = "arguments", rename_all = "snake_case")]
pub enum ToolCall {
    CreateSubAgents {
        sub_agents: Vec<SubAgentTask>,
    },
    Search {
        query: String,
    },
    Access {
        url: String,
        #[serde(default)]
        query: String,
    },
}

impl ToolCall {
    pub fn name(&self) -> &'static str {
        match self {
            ToolCall::CreateSubAgents { .. } => "create_sub_agents",
            ToolCall::Search { .. } => "search",
            ToolCall::Access { .. } => "access",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
}

/// Why a trajectory ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentStatus {
    Answered,
    TurnLimit,
    ContextOverflow,
    MalformedToolLoop,
    PolicyError,
    ToolError,
}

impl AgentStatus {
    /// Exceeded the turn budget or the context window.
    pub fn is_over_limit(self) -> bool {
        matches!(self, AgentStatus::TurnLimit | AgentStatus::ContextOverflow)
    }

    /// Ended because a backend failed rather than through the agent's own output.
    pub fn is_infra_failure(self) -> bool {
        matches!(self, AgentStatus::PolicyError | AgentStatus::ToolError)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    /// 1-based turn index.
    pub turn: u32,
    pub state_hash: String,
    pub state_tokens: usize,
    pub output_text: String,
    pub tokens: Vec<TokenRecord>,
    pub finish: FinishReason,
    #[serde(
        rename = "tool_call_json",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub tool_calls: Option<Vec<ToolCall>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_result_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination: Option<AgentStatus>,
}

impl Turn {
    pub fn has_access_call(&self) -> bool {
        self.tool_calls
            .iter()
            .flatten()
            .any(|c| matches!(c, ToolCall::Access { .. }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrajectory {
    /// 0 is the lead; subagents follow in spawn order.
    pub agent_index: usize,
    pub role: AgentKind,
    /// Lead turn that spawned this subagent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_turn: Option<u32>,
    pub task_text: String,
    pub status: AgentStatus,
    pub turns: Vec<Turn>,
}

impl AgentTrajectory {
    pub fn output_token_count(&self) -> usize {
        self.turns.iter().map(|t| t.tokens.len()).sum()
    }

    pub fn final_turn(&self) -> Option<&Turn> {
        self.turns.last()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub final_answer_text: String,
    pub status: AgentStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutMetadata {
    pub tokenizer: String,
    pub seed: u64,
    #[serde(flatten)]
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_unix_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_unix_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub query_id: String,
    pub rollout_index: u32,
    pub agents: Vec<AgentTrajectory>,
    pub outcome: Outcome,
    pub metadata: RolloutMetadata,
}

impl Rollout {
    pub fn id(&self) -> String {
        format!("{}#{}", self.query_id, self.rollout_index)
    }

    pub fn lead(&self) -> &AgentTrajectory {
        &self.agents[0]
    }

    pub fn subagents(&self) -> &[AgentTrajectory] {
        &self.agents[1..]
    }

    pub fn any_access_call(&self) -> bool {
        self.agents
            .iter()
            .flat_map(|a| &a.turns)
            .any(Turn::has_access_call)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("rollout serializes")
    }
}
