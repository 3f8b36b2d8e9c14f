//! Generation backends behind one interface.
//!
//! [`ScriptedPolicy`] replays canned outputs keyed by role, turn and state,
//! with synthetic logprobs. [`RemotePolicy`] talks to a chat-completions
//! server that reports token logprobs.

#[cfg(feature = "remote")]
mod remote;
mod scripted;

#[cfg(feature = "remote")]
pub use remote::RemotePolicy;
pub use scripted::{Script, ScriptEntry, ScriptError, ScriptOutput, ScriptedPolicy};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::orchestrator::{AgentKind, FinishReason, TokenRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
/// Settings for the chat-completions backend. Plain data, available without
/// the `remote` feature so configs parse everywhere.
pub struct RemoteConfig {
    /// Base URL, e.g. `http://localhost:30000/v1`.
    pub endpoint: String,
    pub model: String,
    #[serde(skip)]
    pub api_key: Option<String>,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_cap_ms: u64,
    pub timeout_secs: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://localhost:30000/v1".to_string(),
            model: "default".to_string(),
            api_key: None,
            max_in_flight: 32,
            max_retries: 3,
            backoff_base_ms: 500,
            backoff_cap_ms: 8000,
            timeout_secs: 600,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        Self {
            role: role.to_string(),
            content: content.into(),
        }
    }
}

/// Byte-stable JSON serialization of a message sequence.
pub fn serialize_messages(messages: &[Message]) -> String {
    serde_json::to_string(messages).expect("messages serialize")
}

/// Hex SHA-256 of [`serialize_messages`].
pub fn state_hash(messages: &[Message]) -> String {
    hex::encode(Sha256::digest(serialize_messages(messages).as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: usize,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 1.0,
            max_tokens: 8192,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub messages: Vec<Message>,
    pub sampling: SamplingParams,
    pub role: AgentKind,
    pub turn: u32,
    pub state_hash: String,
    /// The agent's task text (the query for the lead, the delegated prompt otherwise).
    pub task_text: String,
    /// Per-agent sampling stream; scripted backends derive their choice from it.
    pub sample_key: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub text: String,
    pub tokens: Vec<TokenRecord>,
    pub finish: FinishReason,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("no script entry for role {role:?} turn {turn} state {state_hash}")]
    ScriptMiss {
        role: AgentKind,
        turn: u32,
        state_hash: String,
    },
    #[error("backend returned {got} logprobs for {expected} tokens")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid backend response: {0}")]
    InvalidResponse(String),
}

pub trait TokenCounter {
    fn count_tokens(&self, text: &str) -> usize;
}

pub trait Policy: TokenCounter + Send + Sync {
    fn generate(&self, req: &GenerationRequest) -> Result<Generation, PolicyError>;

    /// Logprobs of a recorded continuation under the current policy,
    /// conditioned on exactly `messages`.
    fn rescore(
        &self,
        messages: &[Message],
        output_text: &str,
        tokens: &[TokenRecord],
    ) -> Result<Vec<f64>, PolicyError>;

    fn tokenizer_id(&self) -> String;
}

/// Splits text into pieces: optional leading whitespace plus either a run of
/// alphanumerics or a single other character. Concatenating the pieces gives
/// back the text.
pub fn simple_tokenize(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    loop {
        while matches!(iter.peek(), Some(&(_, c)) if c.is_whitespace()) {
            iter.next();
        }
        let Some((_, c)) = iter.next() else {
            if start < text.len() {
                out.push(&text[start..]);
            }
            return out;
        };
        if c.is_alphanumeric() {
            while matches!(iter.peek(), Some(&(_, n)) if n.is_alphanumeric()) {
                iter.next();
            }
        }
        let end = iter.peek().map_or(text.len(), |&(j, _)| j);
        out.push(&text[start..end]);
        start = end;
    }
}

/// 32-bit FNV-1a, used for synthetic token ids.
pub fn fnv1a32(bytes: &[u8]) -> u32 {
    let mut h: u32 = 0x811c_9dc5;
    for &b in bytes {
        h ^= u32::from(b);
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

/// SplitMix64 finalizer over a combined pair.
pub fn mix64(a: u64, b: u64) -> u64 {
    let mut z = a ^ b
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(a << 6)
        .wrapping_add(a >> 2);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn hash_str(s: &str) -> u64 {
    let h = Sha256::digest(s.as_bytes());
    u64::from_le_bytes(h[..8].try_into().expect("8 bytes"))
}
