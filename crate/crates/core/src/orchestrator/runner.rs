use std::thread;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::Provenance;
use crate::policy::{hash_str, mix64, state_hash, GenerationRequest, Policy, SamplingParams};
use crate::prompts::PromptSet;
use crate::tools::{ToolBackend, ToolError};

use super::context::{aggregate_reports, build_state, wrap_tool_response, SubagentReport};
use super::toolcall::extract_tool_calls;
use super::{
    AgentKind, AgentStatus, AgentTrajectory, FinishReason, Limits, Outcome, Rollout,
    RolloutMetadata, SubAgentTask, ToolCall, Turn,
};

/// How concurrent work inside a rollout is executed. Recorded output does not
/// depend on the choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Parallel,
    Serial,
    /// One at a time, last spawned first.
    Reversed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RolloutEvent {
    LeadStateBuilt {
        turn: u32,
    },
    SubagentSpawned {
        agent_index: usize,
        parent_turn: u32,
    },
    SubagentTerminal {
        agent_index: usize,
        status: AgentStatus,
    },
    ToolCallsStarted {
        agent_index: usize,
        turn: u32,
        count: usize,
    },
}

/// Receives events from every thread of a rollout.
pub trait RolloutObserver: Sync {
    fn observe(&self, event: RolloutEvent);
}

pub struct RolloutEnv<'a> {
    pub policy: &'a dyn Policy,
    pub tools: &'a dyn ToolBackend,
    pub prompts: &'a PromptSet,
    pub limits: Limits,
    pub sampling: SamplingParams,
    pub seed: u64,
    pub schedule: Schedule,
    pub provenance: Provenance,
    /// Stamp start/finish times into metadata. Off for reproducible output.
    pub wall_clock: bool,
    pub observer: Option<&'a dyn RolloutObserver>,
}

impl RolloutEnv<'_> {
    fn emit(&self, event: RolloutEvent) {
        if let Some(o) = self.observer {
            o.observe(event);
        }
    }
}

/// Per-agent sampling stream.
pub fn sample_key(seed: u64, query_id: &str, rollout_index: u32, agent_index: usize) -> u64 {
    mix64(
        mix64(seed, hash_str(query_id)),
        mix64(u64::from(rollout_index), agent_index as u64),
    )
}

/// Runs `jobs` under `schedule`, returning results in job order.
fn run_all<T, R, F>(schedule: Schedule, jobs: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    match schedule {
        Schedule::Serial => jobs.into_iter().map(f).collect(),
        Schedule::Reversed => {
            let mut out: Vec<R> = jobs.into_iter().rev().map(&f).collect();
            out.reverse();
            out
        }
        Schedule::Parallel if jobs.len() <= 1 => jobs.into_iter().map(f).collect(),
        Schedule::Parallel => thread::scope(|s| {
            let f = &f;
            let handles: Vec<_> = jobs.into_iter().map(|j| s.spawn(move || f(j))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
                .collect()
        }),
    }
}

struct AgentSpec<'s> {
    role: AgentKind,
    agent_index: usize,
    parent_turn: Option<u32>,
    task: &'s str,
    sample_key: u64,
}

/// Generic agent loop. `execute` runs the tool calls of turn `t` and returns
/// the tool-result text, or the status that ends the trajectory.
fn run_agent<F>(env: &RolloutEnv<'_>, spec: AgentSpec<'_>, mut execute: F) -> AgentTrajectory
where
    F: FnMut(u32, &[ToolCall]) -> Result<String, AgentStatus>,
{
    let limits = &env.limits;
    let max_turns = limits.max_turns(spec.role);
    let system = env.prompts.system_message(spec.role);
    let mut turns: Vec<Turn> = Vec::new();
    let mut failures = 0u32;

    let status = loop {
        let t = turns.len() as u32 + 1;
        let built = build_state(
            &system,
            spec.task,
            turns
                .iter()
                .map(|h| (h.output_text.as_str(), h.tool_result_text.as_deref())),
            env.policy,
            limits.max_context_tokens,
        );
        let Ok((messages, state_tokens)) = built else {
            if let Some(last) = turns.last_mut() {
                last.termination = Some(AgentStatus::ContextOverflow);
            }
            break AgentStatus::ContextOverflow;
        };
        if spec.role == AgentKind::Lead {
            env.emit(RolloutEvent::LeadStateBuilt { turn: t });
        }
        let room = limits.max_context_tokens - state_tokens;
        let sampling = SamplingParams {
            max_tokens: env.sampling.max_tokens.min(room),
            ..env.sampling
        };
        let hash = state_hash(&messages);
        let req = GenerationRequest {
            messages,
            sampling,
            role: spec.role,
            turn: t,
            state_hash: hash.clone(),
            task_text: spec.task.to_string(),
            sample_key: spec.sample_key,
        };
        let generation = match env.policy.generate(&req) {
            Ok(g) => g,
            Err(e) => {
                log::error!("agent {} turn {t}: {e}", spec.agent_index);
                if let Some(last) = turns.last_mut() {
                    last.termination = Some(AgentStatus::PolicyError);
                }
                break AgentStatus::PolicyError;
            }
        };
        let mut turn = Turn {
            turn: t,
            state_hash: hash,
            state_tokens,
            output_text: generation.text,
            tokens: generation.tokens,
            finish: generation.finish,
            tool_calls: None,
            parse_error: None,
            tool_result_text: None,
            termination: None,
        };

        // Cut off by the context window rather than the sampling budget.
        if turn.finish == FinishReason::Length && sampling.max_tokens < env.sampling.max_tokens {
            turn.termination = Some(AgentStatus::ContextOverflow);
            turns.push(turn);
            break AgentStatus::ContextOverflow;
        }

        match extract_tool_calls(&turn.output_text, spec.role, limits) {
            Ok(None) => {
                turn.termination = Some(AgentStatus::Answered);
                turns.push(turn);
                break AgentStatus::Answered;
            }
            Ok(Some(calls)) => {
                failures = 0;
                if t >= max_turns {
                    turn.tool_calls = Some(calls);
                    turn.termination = Some(AgentStatus::TurnLimit);
                    turns.push(turn);
                    break AgentStatus::TurnLimit;
                }
                let result = execute(t, &calls);
                turn.tool_calls = Some(calls);
                match result {
                    Ok(text) => turn.tool_result_text = Some(text),
                    Err(status) => {
                        turn.termination = Some(status);
                        turns.push(turn);
                        break status;
                    }
                }
                turns.push(turn);
            }
            Err(failure) => {
                failures += 1;
                let message = failure.to_string();
                turn.tool_result_text = Some(wrap_tool_response(&message));
                turn.parse_error = Some(message);
                let stop = if failures >= limits.max_parse_failures {
                    Some(AgentStatus::MalformedToolLoop)
                } else if t >= max_turns {
                    Some(AgentStatus::TurnLimit)
                } else {
                    None
                };
                turn.termination = stop;
                turns.push(turn);
                if let Some(s) = stop {
                    break s;
                }
            }
        }
    };

    AgentTrajectory {
        agent_index: spec.agent_index,
        role: spec.role,
        parent_turn: spec.parent_turn,
        task_text: spec.task.to_string(),
        status,
        turns,
    }
}

fn tool_error_text(e: &ToolError) -> String {
    match e {
        ToolError::UnknownUrl(url) => format!(
            "Error: unknown URL '{url}'. Only access URLs returned by search; do not invent or fabricate one yourself."
        ),
        other => format!("Error: {other}"),
    }
}

fn run_tool(tools: &dyn ToolBackend, call: &ToolCall) -> Result<String, ToolError> {
    match call {
        ToolCall::Search { query } => tools.search(query),
        ToolCall::Access { url, query } => tools.access(url, query),
        ToolCall::CreateSubAgents { .. } => unreachable!("role gate admits no lead tools here"),
    }
}

fn run_subagent(
    env: &RolloutEnv<'_>,
    query_id: &str,
    rollout_index: u32,
    agent_index: usize,
    parent_turn: u32,
    task: &str,
) -> AgentTrajectory {
    let spec = AgentSpec {
        role: AgentKind::Subagent,
        agent_index,
        parent_turn: Some(parent_turn),
        task,
        sample_key: sample_key(env.seed, query_id, rollout_index, agent_index),
    };
    let trajectory = run_agent(env, spec, |t, calls| {
        env.emit(RolloutEvent::ToolCallsStarted {
            agent_index,
            turn: t,
            count: calls.len(),
        });
        let results = run_all(env.schedule, calls.iter().collect(), |c| {
            run_tool(env.tools, c)
        });
        let mut parts = Vec::with_capacity(results.len());
        for r in results {
            match r {
                Ok(text) => parts.push(wrap_tool_response(&text)),
                Err(e @ ToolError::UnknownUrl(_)) => {
                    parts.push(wrap_tool_response(&tool_error_text(&e)))
                }
                Err(e) => {
                    log::error!("agent {agent_index} turn {t}: {e}");
                    return Err(AgentStatus::ToolError);
                }
            }
        }
        Ok(parts.join("\n"))
    });
    env.emit(RolloutEvent::SubagentTerminal {
        agent_index,
        status: trajectory.status,
    });
    trajectory
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// One complete episode for `question`.
pub fn run_rollout(
    env: &RolloutEnv<'_>,
    query_id: &str,
    question: &str,
    rollout_index: u32,
) -> Rollout {
    let started = env.wall_clock.then(now_ms);
    let mut subagents: Vec<AgentTrajectory> = Vec::new();
    let lead_spec = AgentSpec {
        role: AgentKind::Lead,
        agent_index: 0,
        parent_turn: None,
        task: question,
        sample_key: sample_key(env.seed, query_id, rollout_index, 0),
    };
    let lead = run_agent(env, lead_spec, |t, calls| {
        let ToolCall::CreateSubAgents { sub_agents } = &calls[0] else {
            unreachable!("role gate admits only create_sub_agents for the lead");
        };
        let base = subagents.len() + 1;
        let jobs: Vec<(usize, &SubAgentTask)> = sub_agents
            .iter()
            .enumerate()
            .map(|(k, s)| (base + k, s))
            .collect();
        for &(agent_index, _) in &jobs {
            env.emit(RolloutEvent::SubagentSpawned {
                agent_index,
                parent_turn: t,
            });
        }
        // Wait-all barrier: returns only once every subagent is terminal.
        let finished = run_all(env.schedule, jobs, |(agent_index, task)| {
            run_subagent(env, query_id, rollout_index, agent_index, t, &task.prompt)
        });
        let reports: Vec<SubagentReport<'_>> = finished
            .iter()
            .enumerate()
            .map(|(k, a)| SubagentReport {
                slot: k + 1,
                prompt: &a.task_text,
                final_text: a.final_turn().map_or("", |t| t.output_text.as_str()),
                status: a.status,
            })
            .collect();
        let text = wrap_tool_response(&aggregate_reports(&reports));
        subagents.extend(finished);
        Ok(text)
    });

    let final_answer_text = match lead.status {
        AgentStatus::Answered => lead
            .final_turn()
            .map(|t| t.output_text.clone())
            .unwrap_or_default(),
        _ => String::new(),
    };
    let outcome = Outcome {
        final_answer_text,
        status: lead.status,
    };
    let mut agents = Vec::with_capacity(1 + subagents.len());
    agents.push(lead);
    agents.extend(subagents);
    Rollout {
        query_id: query_id.to_string(),
        rollout_index,
        agents,
        outcome,
        metadata: RolloutMetadata {
            tokenizer: env.policy.tokenizer_id(),
            seed: env.seed,
            provenance: env.provenance.clone(),
            started_unix_ms: started,
            finished_unix_ms: env.wall_clock.then(now_ms),
        },
    }
}

/// `group_size` rollouts of one query, ordered by rollout index.
pub fn run_group(
    env: &RolloutEnv<'_>,
    query_id: &str,
    question: &str,
    group_size: u32,
) -> Vec<Rollout> {
    run_all(env.schedule, (0..group_size).collect(), |i| {
        run_rollout(env, query_id, question, i)
    })
}
