//! Tool-call extraction from agent output.

use serde_json::Value;
use thiserror::Error;

use super::context::strip_think;
use super::{AgentKind, Limits, ToolCall};

const OPEN: &str = "<tool_call>";
const CLOSE: &str = "</tool_call>";

/// Rejected tool-call output. The display text is what the agent sees as the
/// tool result.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseFailure {
    #[error("Error: tool call is not valid JSON ({0}). Emit exactly one JSON object with \"name\" and \"arguments\" inside <tool_call></tool_call>.")]
    MalformedJson(String),
    #[error("Error: <tool_call> block is not closed with </tool_call>.")]
    Unclosed,
    #[error("Error: unknown tool '{0}'.")]
    UnknownTool(String),
    #[error("Error: tool '{tool}' is not available to the {role}.")]
    RoleViolation { tool: String, role: &'static str },
    #[error("Error: invalid arguments for '{tool}': {message}")]
    BadArguments { tool: String, message: String },
    #[error("Error: max {max} subagents per create_sub_agents call, got {got}. Split the work across turns.")]
    TooManySubagents { got: usize, max: usize },
    #[error("Error: create_sub_agents needs at least one non-empty prompt.")]
    NoSubagents,
    #[error("Error: max {max} tool calls per turn, got {got}.")]
    TooManyCalls { got: usize, max: usize },
}

fn role_name(role: AgentKind) -> &'static str {
    match role {
        AgentKind::Lead => "lead agent",
        AgentKind::Subagent => "subagent",
    }
}

/// Bodies of every `<tool_call>` block, in order.
fn blocks(text: &str) -> Result<Vec<&str>, ParseFailure> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(i) = rest.find(OPEN) {
        let after = &rest[i + OPEN.len()..];
        let j = after.find(CLOSE).ok_or(ParseFailure::Unclosed)?;
        out.push(after[..j].trim());
        rest = &after[j + CLOSE.len()..];
    }
    Ok(out)
}

fn parse_one(body: &str, role: AgentKind, limits: &Limits) -> Result<ToolCall, ParseFailure> {
    let mut v: Value =
        serde_json::from_str(body).map_err(|e| ParseFailure::MalformedJson(e.to_string()))?;
    let name = v
        .get("name")
        .and_then(Value::as_str)
        .ok_or_else(|| ParseFailure::MalformedJson("missing \"name\"".into()))?
        .to_string();
    let allowed: &[&str] = match role {
        AgentKind::Lead => &["create_sub_agents"],
        AgentKind::Subagent => &["search", "access"],
    };
    if !allowed.contains(&name.as_str()) {
        return Err(match name.as_str() {
            "create_sub_agents" | "search" | "access" => ParseFailure::RoleViolation {
                tool: name,
                role: role_name(role),
            },
            _ => ParseFailure::UnknownTool(name),
        });
    }
    // Some models emit arguments as a JSON-encoded string.
    if let Some(Value::String(s)) = v.get("arguments") {
        let parsed: Value =
            serde_json::from_str(s).map_err(|e| ParseFailure::MalformedJson(e.to_string()))?;
        v["arguments"] = parsed;
    }
    let call: ToolCall = serde_json::from_value(v).map_err(|e| ParseFailure::BadArguments {
        tool: name.clone(),
        message: e.to_string(),
    })?;
    if let ToolCall::CreateSubAgents { sub_agents } = &call {
        if sub_agents.is_empty() || sub_agents.iter().any(|s| s.prompt.trim().is_empty()) {
            return Err(ParseFailure::NoSubagents);
        }
        if sub_agents.len() > limits.max_subagents_per_turn {
            return Err(ParseFailure::TooManySubagents {
                got: sub_agents.len(),
                max: limits.max_subagents_per_turn,
            });
        }
    }
    Ok(call)
}

/// Tool calls in an agent's output, ignoring anything inside think spans.
///
/// The lead's last block is its call. Subagents may issue several blocks in
/// one turn; every block must parse and the count must be within the cap.
/// `Ok(None)` means the output is terminal.
pub fn extract_tool_calls(
    output: &str,
    role: AgentKind,
    limits: &Limits,
) -> Result<Option<Vec<ToolCall>>, ParseFailure> {
    let visible = strip_think(output);
    let bodies = blocks(&visible)?;
    if bodies.is_empty() {
        return Ok(None);
    }
    match role {
        AgentKind::Lead => {
            let last = bodies[bodies.len() - 1];
            Ok(Some(vec![parse_one(last, role, limits)?]))
        }
        AgentKind::Subagent => {
            if bodies.len() > limits.max_parallel_tool_calls {
                return Err(ParseFailure::TooManyCalls {
                    got: bodies.len(),
                    max: limits.max_parallel_tool_calls,
                });
            }
            let calls = bodies
                .into_iter()
                .map(|b| parse_one(b, role, limits))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Some(calls))
        }
    }
}

/// Wire rendering of a call, as agents write it.
pub fn render_tool_call(call: &ToolCall) -> String {
    format!(
        "{OPEN}\n{}\n{CLOSE}",
        serde_json::to_string(call).expect("tool call serializes")
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::SubAgentTask;

    fn lim() -> Limits {
        Limits::default()
    }

    #[test]
    fn lead_create_sub_agents() {
        let out = r#"<think>plan</think>I will delegate.
<tool_call>{"name":"create_sub_agents","arguments":{"sub_agents":[{"prompt":"Find parks"}]}}</tool_call>"#;
        let calls = extract_tool_calls(out, AgentKind::Lead, &lim())
            .unwrap()
            .unwrap();
        assert_eq!(
            calls,
            vec![ToolCall::CreateSubAgents {
                sub_agents: vec![SubAgentTask {
                    prompt: "Find parks".into()
                }]
            }]
        );
    }

    #[test]
    fn role_gate() {
        let out = r#"<tool_call>{"name":"create_sub_agents","arguments":{"sub_agents":[{"prompt":"x"}]}}</tool_call>"#;
        assert!(matches!(
            extract_tool_calls(out, AgentKind::Subagent, &lim()),
            Err(ParseFailure::RoleViolation { .. })
        ));
        let out = r#"<tool_call>{"name":"search","arguments":{"query":"x"}}</tool_call>"#;
        assert!(matches!(
            extract_tool_calls(out, AgentKind::Lead, &lim()),
            Err(ParseFailure::RoleViolation { .. })
        ));
        let out = r#"<tool_call>{"name":"browse","arguments":{}}</tool_call>"#;
        assert_eq!(
            extract_tool_calls(out, AgentKind::Subagent, &lim()),
            Err(ParseFailure::UnknownTool("browse".into()))
        );
    }

    #[test]
    fn no_block_is_terminal() {
        assert_eq!(
            extract_tool_calls("final answer", AgentKind::Lead, &lim()),
            Ok(None)
        );
        let only_thought = r#"<think><tool_call>{"name":"search","arguments":{"query":"x"}}</tool_call></think>done"#;
        assert_eq!(
            extract_tool_calls(only_thought, AgentKind::Subagent, &lim()),
            Ok(None)
        );
    }

    #[test]
    fn lead_takes_last_block() {
        let a = r#"<tool_call>{"name":"create_sub_agents","arguments":{"sub_agents":[{"prompt":"a"}]}}</tool_call>"#;
        let b = r#"<tool_call>{"name":"create_sub_agents","arguments":{"sub_agents":[{"prompt":"b"}]}}</tool_call>"#;
        let calls = extract_tool_calls(&format!("{a}\n{b}"), AgentKind::Lead, &lim())
            .unwrap()
            .unwrap();
        assert_eq!(calls.len(), 1);
        assert!(
            matches!(&calls[0], ToolCall::CreateSubAgents { sub_agents } if sub_agents[0].prompt == "b")
        );
    }

    #[test]
    fn subagent_parallel_calls_in_order_and_capped() {
        let call = |q: &str| {
            format!(r#"<tool_call>{{"name":"search","arguments":{{"query":"{q}"}}}}</tool_call>"#)
        };
        let five: String = (0..5).map(|i| call(&i.to_string())).collect();
        let calls = extract_tool_calls(&five, AgentKind::Subagent, &lim())
            .unwrap()
            .unwrap();
        assert_eq!(calls.len(), 5);
        assert_eq!(calls[3], ToolCall::Search { query: "3".into() });
        let six: String = (0..6).map(|i| call(&i.to_string())).collect();
        assert_eq!(
            extract_tool_calls(&six, AgentKind::Subagent, &lim()),
            Err(ParseFailure::TooManyCalls { got: 6, max: 5 })
        );
    }

    #[test]
    fn over_cap_subagents_rejected() {
        let prompts: Vec<String> = (0..11).map(|i| format!(r#"{{"prompt":"p{i}"}}"#)).collect();
        let out = format!(
            r#"<tool_call>{{"name":"create_sub_agents","arguments":{{"sub_agents":[{}]}}}}</tool_call>"#,
            prompts.join(",")
        );
        let err = extract_tool_calls(&out, AgentKind::Lead, &lim()).unwrap_err();
        assert_eq!(err, ParseFailure::TooManySubagents { got: 11, max: 10 });
        assert!(err.to_string().contains("max 10 subagents"));
    }

    #[test]
    fn malformed_inputs() {
        let bad = "<tool_call>{not json}</tool_call>";
        assert!(matches!(
            extract_tool_calls(bad, AgentKind::Subagent, &lim()),
            Err(ParseFailure::MalformedJson(_))
        ));
        assert_eq!(
            extract_tool_calls("<tool_call>{", AgentKind::Subagent, &lim()),
            Err(ParseFailure::Unclosed)
        );
        let empty =
            r#"<tool_call>{"name":"create_sub_agents","arguments":{"sub_agents":[]}}</tool_call>"#;
        assert_eq!(
            extract_tool_calls(empty, AgentKind::Lead, &lim()),
            Err(ParseFailure::NoSubagents)
        );
        let missing = r#"<tool_call>{"name":"access","arguments":{}}</tool_call>"#;
        assert!(matches!(
            extract_tool_calls(missing, AgentKind::Subagent, &lim()),
            Err(ParseFailure::BadArguments { .. })
        ));
    }

    #[test]
    fn string_encoded_arguments() {
        let out = r#"<tool_call>{"name":"access","arguments":"{\"url\":\"wiki/X\",\"query\":\"q\"}"}</tool_call>"#;
        let calls = extract_tool_calls(out, AgentKind::Subagent, &lim())
            .unwrap()
            .unwrap();
        assert_eq!(
            calls[0],
            ToolCall::Access {
                url: "wiki/X".into(),
                query: "q".into()
            }
        );
    }

    #[test]
    fn render_round_trips() {
        let c = ToolCall::Access {
            url: "u".into(),
            query: "q".into(),
        };
        let calls = extract_tool_calls(&render_tool_call(&c), AgentKind::Subagent, &lim()).unwrap();
        assert_eq!(calls, Some(vec![c]));
    }
}
