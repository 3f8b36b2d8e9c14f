//! Agent state construction.
//!
//! An agent's state at turn `t` is its system prompt, its task, then each
//! earlier output followed by that turn's tool result. Tool results are sent
//! as user messages wrapped in `<tool_response>` tags.

use crate::policy::{Message, TokenCounter};
use crate::prompts::PromptSet;

use super::{AgentKind, AgentStatus, AgentTrajectory};

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";

/// Removes every `<think>…</think>` span. An unclosed `<think>` swallows the
/// rest of the text; a stray `</think>` drops everything before it.
pub fn strip_think(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    loop {
        let open = rest.find(THINK_OPEN);
        let close = rest.find(THINK_CLOSE);
        match (open, close) {
            (_, Some(c)) if open.is_none_or(|o| c < o) => {
                out.clear();
                rest = &rest[c + THINK_CLOSE.len()..];
            }
            (Some(o), _) => {
                out.push_str(&rest[..o]);
                match rest[o..].find(THINK_CLOSE) {
                    Some(j) => rest = &rest[o + j + THINK_CLOSE.len()..],
                    None => break,
                }
            }
            _ => {
                out.push_str(rest);
                break;
            }
        }
    }
    let out = out.trim();
    // Removing a span can splice a new tag together.
    if out.contains(THINK_OPEN) || out.contains(THINK_CLOSE) {
        return strip_think(out);
    }
    out.to_string()
}

/// One subagent's contribution to the lead's tool context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubagentReport<'a> {
    /// 1-based position within the spawning call.
    pub slot: usize,
    pub prompt: &'a str,
    pub final_text: &'a str,
    pub status: AgentStatus,
}

/// Think-stripped subagent finals, in the order given, each under a stable
/// label.
pub fn aggregate_reports(reports: &[SubagentReport<'_>]) -> String {
    reports
        .iter()
        .map(|r| {
            let note = match r.status {
                AgentStatus::Answered => String::new(),
                s => format!(
                    " (stopped: {})",
                    serde_json::to_value(s)
                        .expect("status")
                        .as_str()
                        .unwrap_or_default()
                ),
            };
            format!(
                "## Subagent {}{note}\nTask: {}\nResult:\n{}",
                r.slot,
                r.prompt,
                strip_think(r.final_text)
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn wrap_tool_response(text: &str) -> String {
    format!("<tool_response>\n{text}\n</tool_response>")
}

/// `[system, task, o1, tcr1, ..., o_{t-1}, tcr_{t-1}]`.
pub fn build_messages<'a>(
    system: &str,
    task: &str,
    history: impl IntoIterator<Item = (&'a str, Option<&'a str>)>,
) -> Vec<Message> {
    let mut msgs = vec![Message::new("system", system), Message::new("user", task)];
    for (output, result) in history {
        msgs.push(Message::new("assistant", output));
        if let Some(r) = result {
            msgs.push(Message::new("user", r));
        }
    }
    msgs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextOverflow {
    pub tokens: usize,
    pub max: usize,
}

/// Token count of a state, as the policy's tokenizer sees it.
pub fn state_tokens(messages: &[Message], counter: &dyn TokenCounter) -> usize {
    messages
        .iter()
        .map(|m| counter.count_tokens(&m.content))
        .sum()
}

/// Messages for the next turn, or the overflow if they do not fit.
pub fn build_state<'a>(
    system: &str,
    task: &str,
    history: impl IntoIterator<Item = (&'a str, Option<&'a str>)>,
    counter: &dyn TokenCounter,
    max_context_tokens: usize,
) -> Result<(Vec<Message>, usize), ContextOverflow> {
    let msgs = build_messages(system, task, history);
    let tokens = state_tokens(&msgs, counter);
    if tokens >= max_context_tokens {
        return Err(ContextOverflow {
            tokens,
            max: max_context_tokens,
        });
    }
    Ok((msgs, tokens))
}

/// Rebuilds the state each recorded turn was generated from.
pub fn reconstruct_states(agent: &AgentTrajectory, prompts: &PromptSet) -> Vec<Vec<Message>> {
    let system = prompts.system_message(agent.role);
    (0..agent.turns.len())
        .map(|t| {
            build_messages(
                &system,
                &agent.task_text,
                agent.turns[..t]
                    .iter()
                    .map(|h| (h.output_text.as_str(), h.tool_result_text.as_deref())),
            )
        })
        .collect()
}

pub fn system_prompt_id(prompts: &PromptSet, role: AgentKind) -> &str {
    match role {
        AgentKind::Lead => &prompts.lead.id,
        AgentKind::Subagent => &prompts.sub.id,
    }
}
