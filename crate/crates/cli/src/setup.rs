//! Config, backend and tool construction shared by the subcommands.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use fanout_core::config::{BackendKind, Provenance, RunConfig, ToolsKind};
use fanout_core::datapipe::{load_dataset, DatasetInstance};
use fanout_core::orchestrator::Rollout;
use fanout_core::policy::{Policy, Script, ScriptedPolicy};
use fanout_core::prompts::PromptSet;
use fanout_core::tools::{Index, LocalTools, ToolBackend};

use crate::error::{CliError, Context};
use crate::Global;

pub struct Setup {
    pub cfg: RunConfig,
    pub hash: String,
}

impl Setup {
    /// Loads the config (or defaults) and applies flag overrides. The hash
    /// covers the overrides.
    pub fn load(g: &Global) -> Result<Self, CliError> {
        let mut cfg = match &g.config {
            Some(p) => RunConfig::load(p).ctx("config", p.display())?,
            None => RunConfig::default(),
        };
        if let Some(seed) = g.seed {
            cfg.seed = seed;
        }
        if let Some(b) = g.backend {
            cfg.backend.kind = b.into();
        }
        if let Some(n) = g.group_size {
            cfg.advantage.group_size = n;
        }
        cfg.validate().ctx("config", "after overrides")?;
        let hash = cfg.hash();
        Ok(Self { cfg, hash })
    }

    pub fn prompts(&self) -> Result<PromptSet, CliError> {
        self.cfg.prompt_set().ctx("io", "prompt file")
    }

    pub fn policy(&self) -> Result<Box<dyn Policy>, CliError> {
        let b = &self.cfg.backend;
        match b.kind {
            BackendKind::Scripted => {
                let path = b.script.as_ref().ok_or_else(|| {
                    CliError::new("config", "scripted backend needs backend.script")
                })?;
                let path = self.cfg.resolve(path);
                let script = Script::load(&path).ctx("backend", path.display())?;
                Ok(Box::new(
                    ScriptedPolicy::new(script).with_rescore_jitter(b.rescore_jitter),
                ))
            }
            BackendKind::Remote => {
                let mut remote = b.remote.clone();
                remote.api_key = std::env::var(&b.api_key_env).ok().filter(|k| !k.is_empty());
                Ok(Box::new(fanout_core::policy::RemotePolicy::new(remote)))
            }
        }
    }

    pub fn tools(&self, corpus_flag: Option<&Path>) -> Result<Box<dyn ToolBackend>, CliError> {
        let t = &self.cfg.tools;
        match t.kind {
            ToolsKind::Remote => {
                let endpoint = t
                    .endpoint
                    .clone()
                    .ok_or_else(|| CliError::new("config", "remote tools need tools.endpoint"))?;
                Ok(Box::new(fanout_core::tools::RemoteTools::new(endpoint)))
            }
            ToolsKind::Local => {
                let index = if let Some(c) = corpus_flag {
                    Index::from_corpus_file(c).ctx("tools", c.display())?
                } else if let Some(i) = &t.index {
                    let p = self.cfg.resolve(i);
                    Index::load(&p).ctx("tools", p.display())?
                } else if let Some(c) = &t.corpus {
                    let p = self.cfg.resolve(c);
                    Index::from_corpus_file(&p).ctx("tools", p.display())?
                } else {
                    return Err(CliError::new(
                        "usage",
                        "local tools need --corpus, tools.corpus or tools.index",
                    ));
                };
                Ok(Box::new(LocalTools::new(index, t.params)))
            }
        }
    }

    pub fn provenance(&self, tools: Option<&dyn ToolBackend>, prompts: &PromptSet) -> Provenance {
        let versions: BTreeMap<String, String> = tools
            .map(|t| ("tools".to_string(), t.version()))
            .into_iter()
            .collect();
        self.cfg.provenance(versions, prompts)
    }
}

pub fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::new("usage", format!("{flag} is required")))
}

pub fn dataset(g: &Global) -> Result<Vec<DatasetInstance>, CliError> {
    let p = required(&g.dataset, "--dataset")?;
    load_dataset(p).ctx("input", p.display())
}

pub fn read_rollouts(path: &Path) -> Result<Vec<Rollout>, CliError> {
    read_jsonl(path)
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let f = File::open(path).ctx("io", path.display())?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.ctx("io", path.display())?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .ctx("input", format!("{} line {}", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

/// `--out` file, or stdout.
pub fn output(out: &Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).ctx("io", p.display())?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

pub fn write_line(w: &mut dyn Write, value: &impl serde::Serialize) -> Result<(), CliError> {
    serde_json::to_writer(&mut *w, value).ctx("io", "serialize output")?;
    w.write_all(b"\n").ctx("io", "write output")
}
