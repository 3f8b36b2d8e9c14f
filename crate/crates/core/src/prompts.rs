//! System prompts, shipped as data files and referenced by id.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::orchestrator::AgentKind;

pub const LEAD_AGENT: &str = include_str!("../prompts/lead_agent.txt");
pub const SUBAGENT: &str = include_str!("../prompts/subagent.txt");
pub const LEAD_TOOLS: &str = include_str!("../prompts/lead_tools.txt");
pub const SUBAGENT_TOOLS: &str = include_str!("../prompts/subagent_tools.txt");
/// Stage 1 refinement prompt; not taken from any published pipeline.
pub const QUERY_REFINE: &str = include_str!("../prompts/query_refine.txt");
/// Stage 2 answer prompt; not taken from any published pipeline.
pub const ANSWER_GENERATION: &str = include_str!("../prompts/answer_generation.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: String,
    pub text: String,
}

impl Prompt {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }

    /// Loads a prompt file; the id is the file stem.
    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        Ok(Self { id, text })
    }
}

/// System prompts for both roles. The system message is the role prompt
/// followed by the tool description block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub lead: Prompt,
    pub lead_tools: Prompt,
    pub sub: Prompt,
    pub sub_tools: Prompt,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            lead: Prompt::new("lead_agent", LEAD_AGENT),
            lead_tools: Prompt::new("lead_tools", LEAD_TOOLS),
            sub: Prompt::new("subagent", SUBAGENT),
            sub_tools: Prompt::new("subagent_tools", SUBAGENT_TOOLS),
        }
    }
}

impl PromptSet {
    pub fn system_message(&self, role: AgentKind) -> String {
        let (p, tools) = match role {
            AgentKind::Lead => (&self.lead, &self.lead_tools),
            AgentKind::Subagent => (&self.sub, &self.sub_tools),
        };
        format!("{}\n{}", p.text.trim_end(), tools.text.trim_end())
    }

    pub fn ids(&self) -> Vec<String> {
        [&self.lead, &self.lead_tools, &self.sub, &self.sub_tools]
            .iter()
            .map(|p| p.id.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_prompts_carry_the_protocol_markers() {
        assert!(LEAD_AGENT.contains("create_sub_agents"));
        assert!(LEAD_AGENT.contains("```markdown\n{data_content}\n```"));
        assert!(SUBAGENT.contains("do not invent or fabricate one yourself"));
        assert!(LEAD_TOOLS.contains("<tool_call>"));
        let set = PromptSet::default();
        assert!(set
            .system_message(AgentKind::Subagent)
            .contains("\"name\": \"access\""));
        assert_eq!(set.ids().len(), 4);
    }
}
