use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use super::{
    fnv1a32, Generation, GenerationRequest, Message, Policy, PolicyError, RemoteConfig,
    TokenCounter,
};
use crate::orchestrator::{FinishReason, TokenRecord};

/// Counting semaphore bounding in-flight requests.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().expect("slot lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("slot lock");
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("slot lock") += 1;
        self.0.cv.notify_one();
    }
}

/// Chat-completions client. Requests carry an `X-Request-Id`; each blocking
/// call pairs its response with its own request.
pub struct RemotePolicy {
    cfg: RemoteConfig,
    agent: ureq::Agent,
    slots: Slots,
    next_id: AtomicU64,
}

impl RemotePolicy {
    pub fn new(cfg: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let slots = Slots {
            free: Mutex::new(cfg.max_in_flight.max(1)),
            cv: Condvar::new(),
        };
        Self {
            cfg,
            agent,
            slots,
            next_id: AtomicU64::new(0),
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .cfg
            .backoff_base_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.cfg.backoff_cap_ms);
        Duration::from_millis(ms)
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, PolicyError> {
        let _slot = self.slots.acquire();
        let url = format!("{}/{}", self.cfg.endpoint.trim_end_matches('/'), path);
        let request_id = format!("fanout-{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let mut last_err = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff(attempt - 1));
            }
            let mut req = self.agent.post(&url).header("X-Request-Id", &request_id);
            if let Some(key) = &self.cfg.api_key {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            match req.send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if status == 429 || status >= 500 {
                        last_err = format!("HTTP {status}");
                        continue;
                    }
                    if status >= 400 {
                        let text = resp.body_mut().read_to_string().unwrap_or_default();
                        return Err(PolicyError::InvalidResponse(format!(
                            "HTTP {status}: {text}"
                        )));
                    }
                    return resp
                        .body_mut()
                        .read_json::<Value>()
                        .map_err(|e| PolicyError::InvalidResponse(e.to_string()));
                }
                Err(e) => last_err = e.to_string(),
            }
            log::warn!("{url} attempt {} failed: {last_err}", attempt + 1);
        }
        Err(PolicyError::BackendUnavailable(last_err))
    }
}

/// Token id from `token_id:N` strings (as emitted by servers asked to return
/// ids) or a hash of the token text.
fn token_id(token: &str) -> u32 {
    token
        .strip_prefix("token_id:")
        .and_then(|n| n.parse().ok())
        .unwrap_or_else(|| fnv1a32(token.as_bytes()))
}

/// ChatML rendering used for re-scoring through the completions endpoint.
pub fn render_chatml(messages: &[Message], continuation: &str) -> String {
    let mut out = String::new();
    for m in messages {
        out.push_str("<|im_start|>");
        out.push_str(&m.role);
        out.push('\n');
        out.push_str(&m.content);
        out.push_str("<|im_end|>\n");
    }
    out.push_str("<|im_start|>assistant\n");
    out.push_str(continuation);
    out
}

fn parse_chat_response(v: &Value) -> Result<Generation, PolicyError> {
    let bad = |what: &str| PolicyError::InvalidResponse(what.to_string());
    let choice = v["choices"].get(0).ok_or_else(|| bad("no choices"))?;
    let text = choice["message"]["content"]
        .as_str()
        .unwrap_or_default()
        .to_string();
    let content = choice["logprobs"]["content"]
        .as_array()
        .ok_or_else(|| bad("response has no token logprobs"))?;
    let tokens = content
        .iter()
        .map(|t| {
            let lp = t["logprob"]
                .as_f64()
                .ok_or_else(|| bad("token without logprob"))?;
            let id = t["token"].as_str().map_or(0, token_id);
            Ok(TokenRecord::new(id, lp.min(0.0)))
        })
        .collect::<Result<Vec<_>, PolicyError>>()?;
    let finish = match choice["finish_reason"].as_str() {
        Some("length") => FinishReason::Length,
        _ => FinishReason::Stop,
    };
    Ok(Generation {
        text,
        tokens,
        finish,
    })
}

impl TokenCounter for RemotePolicy {
    /// Rough estimate of four characters per token; exact counts come from
    /// the server with each generation.
    fn count_tokens(&self, text: &str) -> usize {
        text.chars().count().div_ceil(4)
    }
}

impl Policy for RemotePolicy {
    fn generate(&self, req: &GenerationRequest) -> Result<Generation, PolicyError> {
        let body = json!({
            "model": self.cfg.model,
            "messages": req.messages,
            "temperature": req.sampling.temperature,
            "top_p": req.sampling.top_p,
            "max_tokens": req.sampling.max_tokens,
            "logprobs": true,
            "top_logprobs": 0,
        });
        let v = self.post("chat/completions", &body)?;
        parse_chat_response(&v)
    }

    fn rescore(
        &self,
        messages: &[Message],
        output_text: &str,
        tokens: &[TokenRecord],
    ) -> Result<Vec<f64>, PolicyError> {
        let body = json!({
            "model": self.cfg.model,
            "prompt": render_chatml(messages, output_text),
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
            "temperature": 1.0,
        });
        let v = self.post("completions", &body)?;
        let lps = v["choices"][0]["logprobs"]["token_logprobs"]
            .as_array()
            .ok_or_else(|| PolicyError::InvalidResponse("no token_logprobs".into()))?;
        if lps.len() < tokens.len() {
            return Err(PolicyError::LengthMismatch {
                expected: tokens.len(),
                got: lps.len(),
            });
        }
        lps[lps.len() - tokens.len()..]
            .iter()
            .map(|x| {
                x.as_f64().ok_or_else(|| {
                    PolicyError::InvalidResponse("null logprob in continuation".into())
                })
            })
            .collect()
    }

    fn tokenizer_id(&self) -> String {
        format!("remote:{}", self.cfg.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_chat_completion_with_logprobs() {
        let v = json!({
            "id": "x",
            "choices": [{
                "message": {"role": "assistant", "content": "Hi"},
                "finish_reason": "length",
                "logprobs": {"content": [{"token": "token_id:17", "logprob": -0.25}]}
            }]
        });
        let g = parse_chat_response(&v).unwrap();
        assert_eq!(g.text, "Hi");
        assert_eq!(g.tokens, vec![TokenRecord::new(17, -0.25)]);
        assert_eq!(g.finish, FinishReason::Length);
    }

    #[test]
    fn missing_logprobs_is_invalid() {
        let v = json!({"choices": [{"message": {"content": "Hi"}, "finish_reason": "stop"}]});
        assert!(matches!(
            parse_chat_response(&v),
            Err(PolicyError::InvalidResponse(_))
        ));
    }

    #[test]
    fn chatml_render() {
        let s = render_chatml(
            &[Message::new("system", "p"), Message::new("user", "q")],
            "o",
        );
        assert_eq!(
            s,
            "<|im_start|>system\np<|im_end|>\n<|im_start|>user\nq<|im_end|>\n<|im_start|>assistant\no"
        );
    }

    #[test]
    fn backoff_is_capped() {
        let p = RemotePolicy::new(RemoteConfig {
            backoff_base_ms: 100,
            backoff_cap_ms: 1000,
            ..Default::default()
        });
        assert_eq!(p.backoff(0), Duration::from_millis(100));
        assert_eq!(p.backoff(2), Duration::from_millis(400));
        assert_eq!(p.backoff(10), Duration::from_millis(1000));
    }
}
