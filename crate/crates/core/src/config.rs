//! Run configuration (TOML or JSON) and the provenance stamped on outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::advantage::ClipRange;
use crate::buffer::RepetitionConfig;
use crate::datapipe::PipelineConfig;
use crate::orchestrator::Limits;
use crate::policy::{RemoteConfig, SamplingParams};
use crate::prompts::{Prompt, PromptSet};
use crate::reward::RewardConfig;
use crate::tools::ToolParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Identifies what produced an artifact.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    #[serde(default)]
    pub tool_versions: BTreeMap<String, String>,
    #[serde(default)]
    pub prompt_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdvantageConfig {
    pub eps_low: f64,
    pub eps_high: f64,
    pub group_size: u32,
}

impl Default for AdvantageConfig {
    fn default() -> Self {
        Self {
            eps_low: 0.2,
            eps_high: 0.28,
            group_size: 8,
        }
    }
}

impl AdvantageConfig {
    pub fn clip(&self) -> ClipRange {
        ClipRange {
            eps_low: self.eps_low,
            eps_high: self.eps_high,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Scripted,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Script file for the scripted backend.
    pub script: Option<PathBuf>,
    /// Amplitude of deterministic noise added by scripted re-scoring.
    pub rescore_jitter: f64,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    #[serde(flatten)]
    pub remote: RemoteConfig,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Scripted,
            script: None,
            rescore_jitter: 0.0,
            api_key_env: "FANOUT_API_KEY".to_string(),
            remote: RemoteConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolsKind {
    #[default]
    Local,
    Remote,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolsConfig {
    pub kind: ToolsKind,
    pub corpus: Option<PathBuf>,
    /// Prebuilt index; built from `corpus` when absent.
    pub index: Option<PathBuf>,
    pub endpoint: Option<String>,
    #[serde(flatten)]
    pub params: ToolParams,
}

/// Optional prompt file overrides; shipped prompts are used otherwise.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptPaths {
    pub lead: Option<PathBuf>,
    pub lead_tools: Option<PathBuf>,
    pub subagent: Option<PathBuf>,
    pub subagent_tools: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub limits: Limits,
    pub reward: RewardConfig,
    pub advantage: AdvantageConfig,
    pub sampling: SamplingParams,
    pub backend: BackendConfig,
    pub tools: ToolsConfig,
    pub prompts: PromptPaths,
    pub repetition: RepetitionConfig,
    pub pipeline: PipelineConfig,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl FromStr for RunConfig {
    type Err = ConfigError;

    /// Parses TOML, or JSON when the text starts with `{`.
    fn from_str(text: &str) -> Result<Self, ConfigError> {
        if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid(e.to_string())
}

impl RunConfig {
    /// Loads and validates a config file. Relative paths inside it resolve
    /// against the file's directory; the hash covers the text as written.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        cfg.validate()?;
        Ok(cfg)
    }

    /// A path from the config, resolved against the config's directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.limits.validate().map_err(invalid)?;
        self.reward.validate().map_err(invalid)?;
        self.repetition.validate().map_err(invalid)?;
        self.pipeline.validate().map_err(invalid)?;
        let a = &self.advantage;
        if !(0.0..1.0).contains(&a.eps_low) || a.eps_high < 0.0 {
            return Err(invalid(
                "advantage: need 0 <= eps_low < 1 and eps_high >= 0",
            ));
        }
        if a.group_size == 0 {
            return Err(invalid("advantage.group_size must be at least 1"));
        }
        let s = &self.sampling;
        if s.max_tokens == 0 || s.temperature < 0.0 || !(s.top_p > 0.0 && s.top_p <= 1.0) {
            return Err(invalid(
                "sampling: need max_tokens >= 1, temperature >= 0, top_p in (0, 1]",
            ));
        }
        let p = &self.tools.params;
        if p.search_k == 0 || p.access_words == 0 || p.snippet_words == 0 {
            return Err(invalid(
                "tools: search_k, snippet_words and access_words must be positive",
            ));
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string()
    }

    pub fn prompt_set(&self) -> std::io::Result<PromptSet> {
        let mut set = PromptSet::default();
        let slots: [(&Option<PathBuf>, &mut Prompt); 4] = [
            (&self.prompts.lead, &mut set.lead),
            (&self.prompts.lead_tools, &mut set.lead_tools),
            (&self.prompts.subagent, &mut set.sub),
            (&self.prompts.subagent_tools, &mut set.sub_tools),
        ];
        for (path, slot) in slots {
            if let Some(p) = path {
                *slot = Prompt::from_file(&self.resolve(p))?;
            }
        }
        Ok(set)
    }

    pub fn provenance(
        &self,
        tool_versions: BTreeMap<String, String>,
        prompts: &PromptSet,
    ) -> Provenance {
        Provenance {
            config_hash: self.hash(),
            tool_versions,
            prompt_ids: prompts.ids(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_training_constants() {
        let c = RunConfig::default();
        assert_eq!(c.limits.max_lead_turns, 10);
        assert_eq!(c.limits.max_sub_turns, 20);
        assert_eq!(c.limits.max_context_tokens, 32768);
        assert_eq!((c.advantage.eps_low, c.advantage.eps_high), (0.2, 0.28));
        assert_eq!((c.sampling.temperature, c.sampling.top_p), (1.0, 1.0));
        assert_eq!(c.reward.len_threshold, 3000);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn toml_and_json_agree() {
        let toml_text = "seed = 7\n[advantage]\ngroup_size = 4\n[limits]\nmax_sub_turns = 5\n";
        let json_text =
            r#"{"seed": 7, "advantage": {"group_size": 4}, "limits": {"max_sub_turns": 5}}"#;
        let a = RunConfig::from_str(toml_text).unwrap();
        let b = RunConfig::from_str(json_text).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), RunConfig::default().hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn rejects_bad_values() {
        let c = RunConfig::from_str("[advantage]\ngroup_size = 0\n").unwrap();
        assert!(c.validate().is_err());
        let c = RunConfig::from_str("[limits]\nmax_lead_turns = 0\n").unwrap();
        assert!(c.validate().is_err());
        assert!(RunConfig::from_str("seed = \"x\"").is_err());
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "[backend]\nscript = \"s.json\"\n").unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(
            c.resolve(c.backend.script.as_ref().unwrap()),
            dir.path().join("s.json")
        );
        assert_eq!(
            c.hash(),
            RunConfig::from_str("[backend]\nscript = \"s.json\"\n")
                .unwrap()
                .hash()
        );
    }
}
