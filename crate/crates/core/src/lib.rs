//! Lead-agent/subagent rollouts over local search tools, with the reward,
//! advantage and buffer computations that turn them into training signal,
//! and the table metrics used for evaluation and dataset filtering.

pub mod advantage;
pub mod buffer;
pub mod config;
pub mod datapipe;
pub mod metrics;
pub mod orchestrator;
pub mod policy;
pub mod prompts;
pub mod reward;
pub mod tabletext;
pub mod tools;
