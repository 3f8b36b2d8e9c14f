use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    fnv1a32, hash_str, mix64, simple_tokenize, state_hash, Generation, GenerationRequest, Message,
    Policy, PolicyError, TokenCounter,
};
use crate::orchestrator::{AgentKind, FinishReason, TokenRecord};

/// Logprob assigned to every scripted token unless the script overrides it.
pub const DEFAULT_LOGPROB: f64 = -0.5;

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("reading script: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing script: {0}")]
    Json(#[from] serde_json::Error),
    #[error("entry {0} has no output text")]
    EmptyEntry(usize),
    #[error("entry {entry}: {logprobs} logprobs for {tokens} tokens")]
    LogprobCount {
        entry: usize,
        logprobs: usize,
        tokens: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptOutput {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
}

/// One scripted response. Matching prefers an exact `state_hash`, then an
/// exact `task`, then an entry that names neither. Ties go to file order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub role: AgentKind,
    pub turn: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
    /// Sampled alternatives; one is picked per request from its sample key.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alternatives: Vec<ScriptOutput>,
}

impl ScriptEntry {
    fn outputs(&self) -> Vec<ScriptOutput> {
        if !self.alternatives.is_empty() {
            return self.alternatives.clone();
        }
        self.text
            .iter()
            .map(|t| ScriptOutput {
                text: t.clone(),
                logprobs: self.logprobs.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    pub entries: Vec<ScriptEntry>,
    /// Re-scoring results keyed by state hash.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub rescore_overrides: BTreeMap<String, Vec<f64>>,
}

impl Script {
    pub fn from_json(s: &str) -> Result<Self, ScriptError> {
        let script: Script = serde_json::from_str(s)?;
        script.validate()?;
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ScriptError> {
        for (i, e) in self.entries.iter().enumerate() {
            let outs = e.outputs();
            if outs.is_empty() {
                return Err(ScriptError::EmptyEntry(i));
            }
            for o in outs {
                if let Some(lp) = &o.logprobs {
                    let tokens = simple_tokenize(&o.text).len();
                    if lp.len() != tokens {
                        return Err(ScriptError::LogprobCount {
                            entry: i,
                            logprobs: lp.len(),
                            tokens,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Deterministic backend: generation and re-scoring are pure functions of
/// the script and the request.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    script: Script,
    rescore_jitter: f64,
}

impl ScriptedPolicy {
    pub fn new(script: Script) -> Self {
        Self {
            script,
            rescore_jitter: 0.0,
        }
    }

    /// Re-scored logprobs deviate from the recorded ones by up to
    /// `amplitude` nats, deterministically per state and position.
    pub fn with_rescore_jitter(mut self, amplitude: f64) -> Self {
        self.rescore_jitter = amplitude;
        self
    }

    pub fn script(&self) -> &Script {
        &self.script
    }

    fn lookup(&self, req: &GenerationRequest) -> Option<&ScriptEntry> {
        let candidates = || {
            self.script
                .entries
                .iter()
                .filter(|e| e.role == req.role && e.turn == req.turn)
        };
        candidates()
            .find(|e| e.state_hash.as_deref() == Some(req.state_hash.as_str()))
            .or_else(|| {
                candidates().find(|e| {
                    e.state_hash.is_none() && e.task.as_deref() == Some(req.task_text.as_str())
                })
            })
            .or_else(|| candidates().find(|e| e.state_hash.is_none() && e.task.is_none()))
    }
}

pub(crate) fn scripted_tokens(text: &str, logprobs: Option<&[f64]>) -> Vec<TokenRecord> {
    simple_tokenize(text)
        .iter()
        .enumerate()
        .map(|(i, piece)| {
            let lp = logprobs.map_or(DEFAULT_LOGPROB, |l| l[i]);
            TokenRecord::new(fnv1a32(piece.as_bytes()), lp)
        })
        .collect()
}

impl TokenCounter for ScriptedPolicy {
    fn count_tokens(&self, text: &str) -> usize {
        simple_tokenize(text).len()
    }
}

impl Policy for ScriptedPolicy {
    fn generate(&self, req: &GenerationRequest) -> Result<Generation, PolicyError> {
        let entry = self.lookup(req).ok_or_else(|| PolicyError::ScriptMiss {
            role: req.role,
            turn: req.turn,
            state_hash: req.state_hash.clone(),
        })?;
        let outputs = entry.outputs();
        let pick =
            (mix64(req.sample_key, hash_str(&req.state_hash)) % outputs.len() as u64) as usize;
        let out = &outputs[pick];

        let pieces = simple_tokenize(&out.text);
        let max = req.sampling.max_tokens.max(1);
        if pieces.len() > max {
            let text: String = pieces[..max].concat();
            let lp = out.logprobs.as_ref().map(|l| &l[..max]);
            return Ok(Generation {
                tokens: scripted_tokens(&text, lp),
                text,
                finish: FinishReason::Length,
            });
        }
        Ok(Generation {
            tokens: scripted_tokens(&out.text, out.logprobs.as_deref()),
            text: out.text.clone(),
            finish: FinishReason::Stop,
        })
    }

    fn rescore(
        &self,
        messages: &[Message],
        _output_text: &str,
        tokens: &[TokenRecord],
    ) -> Result<Vec<f64>, PolicyError> {
        let hash = state_hash(messages);
        if let Some(lp) = self.script.rescore_overrides.get(&hash) {
            if lp.len() != tokens.len() {
                return Err(PolicyError::LengthMismatch {
                    expected: tokens.len(),
                    got: lp.len(),
                });
            }
            return Ok(lp.clone());
        }
        if self.rescore_jitter == 0.0 {
            return Ok(tokens.iter().map(|t| t.logprob_old).collect());
        }
        let seed = hash_str(&hash);
        Ok(tokens
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let u = mix64(seed, i as u64) as f64 / u64::MAX as f64;
                (t.logprob_old + self.rescore_jitter * (2.0 * u - 1.0)).min(0.0)
            })
            .collect())
    }

    fn tokenizer_id(&self) -> String {
        "scripted-pieces-v1".to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::SamplingParams;

    fn script() -> Script {
        Script::from_json(
            r#"{
              "entries": [
                {"role": "lead", "turn": 1, "text": "<tool_call>{}</tool_call>"},
                {"role": "subagent", "turn": 1, "task": "find x", "text": "x found", "logprobs": [-0.1, -0.2]},
                {"role": "subagent", "turn": 1, "text": "generic"},
                {"role": "lead", "turn": 2, "alternatives": [{"text": "a"}, {"text": "b"}, {"text": "c"}]}
              ],
              "rescore_overrides": {"STATE": [-1.0]}
            }"#,
        )
        .unwrap()
    }

    fn req(role: AgentKind, turn: u32, task: &str, key: u64) -> GenerationRequest {
        GenerationRequest {
            messages: vec![Message::new("user", task)],
            sampling: SamplingParams::default(),
            role,
            turn,
            state_hash: format!("h-{task}"),
            task_text: task.to_string(),
            sample_key: key,
        }
    }

    #[test]
    fn lookup_and_synthetic_logprobs() {
        let p = ScriptedPolicy::new(script());
        let g = p.generate(&req(AgentKind::Lead, 1, "q", 0)).unwrap();
        assert_eq!(g.text, "<tool_call>{}</tool_call>");
        assert!(g.tokens.iter().all(|t| t.logprob_old == DEFAULT_LOGPROB));
        assert_eq!(g.finish, FinishReason::Stop);

        let g = p
            .generate(&req(AgentKind::Subagent, 1, "find x", 0))
            .unwrap();
        assert_eq!(g.text, "x found");
        assert_eq!(
            g.tokens.iter().map(|t| t.logprob_old).collect::<Vec<_>>(),
            vec![-0.1, -0.2]
        );
        let g = p
            .generate(&req(AgentKind::Subagent, 1, "other", 0))
            .unwrap();
        assert_eq!(g.text, "generic");
    }

    #[test]
    fn miss_is_an_error() {
        let p = ScriptedPolicy::new(script());
        assert!(matches!(
            p.generate(&req(AgentKind::Lead, 9, "q", 0)),
            Err(PolicyError::ScriptMiss { turn: 9, .. })
        ));
    }

    #[test]
    fn identical_requests_identical_generations() {
        let p = ScriptedPolicy::new(script());
        let r = req(AgentKind::Lead, 2, "q", 42);
        assert_eq!(p.generate(&r).unwrap(), p.generate(&r).unwrap());
        let picks: std::collections::BTreeSet<String> = (0..64)
            .map(|k| p.generate(&req(AgentKind::Lead, 2, "q", k)).unwrap().text)
            .collect();
        assert_eq!(picks.len(), 3);
    }

    #[test]
    fn truncation_reports_length() {
        let p = ScriptedPolicy::new(script());
        let mut r = req(AgentKind::Subagent, 1, "find x", 0);
        r.sampling.max_tokens = 1;
        let g = p.generate(&r).unwrap();
        assert_eq!(g.tokens.len(), 1);
        assert_eq!(g.text, "x");
        assert_eq!(g.finish, FinishReason::Length);
    }

    #[test]
    fn rescore_modes() {
        let p = ScriptedPolicy::new(script());
        let toks = scripted_tokens("a b", None);
        let msgs = vec![Message::new("user", "q")];
        assert_eq!(p.rescore(&msgs, "a b", &toks).unwrap(), vec![-0.5, -0.5]);

        let mut s = script();
        s.rescore_overrides
            .insert(state_hash(&msgs), vec![-0.7, -0.9]);
        let p = ScriptedPolicy::new(s.clone());
        assert_eq!(p.rescore(&msgs, "a b", &toks).unwrap(), vec![-0.7, -0.9]);

        s.rescore_overrides.insert(state_hash(&msgs), vec![-0.7]);
        let p = ScriptedPolicy::new(s);
        assert_eq!(
            p.rescore(&msgs, "a b", &toks),
            Err(PolicyError::LengthMismatch {
                expected: 2,
                got: 1
            })
        );

        let p = ScriptedPolicy::new(script()).with_rescore_jitter(0.3);
        let a = p.rescore(&msgs, "a b", &toks).unwrap();
        assert_eq!(a, p.rescore(&msgs, "a b", &toks).unwrap());
        assert!(a.iter().all(|&x| x <= 0.0 && (x + 0.5).abs() <= 0.3));
    }

    #[test]
    fn bad_logprob_count_rejected() {
        let err = Script::from_json(
            r#"{"entries":[{"role":"lead","turn":1,"text":"a b c","logprobs":[-1.0]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, ScriptError::LogprobCount { tokens: 3, .. }));
        assert!(matches!(
            Script::from_json(r#"{"entries":[{"role":"lead","turn":1}]}"#),
            Err(ScriptError::EmptyEntry(0))
        ));
    }
}
