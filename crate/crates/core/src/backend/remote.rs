use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use base64::Engine as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    Backend, BackendError, BackendIdentity, BackendKind, ModelRequest, ModelResponse, Usage,
};
use crate::message::PartContent;

static NETWORK_ATTEMPTS: AtomicUsize = AtomicUsize::new(0);
static NETWORK_FORBIDDEN: AtomicBool = AtomicBool::new(false);

/// Number of HTTP attempts made by any remote backend in this process.
pub fn network_attempts() -> usize {
    NETWORK_ATTEMPTS.load(Ordering::SeqCst)
}

/// When set, any attempt to open a connection panics. Used by tests that
/// must prove a code path stays offline.
pub fn set_network_forbidden(forbidden: bool) {
    NETWORK_FORBIDDEN.store(forbidden, Ordering::SeqCst);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    /// Base URL; `/chat/completions` is appended.
    pub endpoint: String,
    pub api_key_env: String,
    pub max_in_flight: usize,
    /// Minimum spacing between request starts.
    pub min_interval_ms: u64,
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".into(),
            api_key_env: "MODAL_ARC_API_KEY".into(),
            max_in_flight: 4,
            min_interval_ms: 0,
            max_attempts: 5,
            base_backoff_ms: 1000,
            max_backoff_ms: 60_000,
            timeout_secs: 600,
        }
    }
}

struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    cap: usize,
}

impl Gate {
    fn enter(&self) -> GateGuard<'_> {
        let mut n = self.in_flight.lock().expect("gate lock");
        while *n >= self.cap {
            n = self.freed.wait(n).expect("gate lock");
        }
        *n += 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().expect("gate lock");
        *n -= 1;
        self.0.freed.notify_one();
    }
}

pub struct RemoteBackend {
    cfg: RemoteConfig,
    url: String,
    api_key: String,
    client: reqwest::blocking::Client,
    gate: Gate,
    next_slot: Mutex<Instant>,
    rng: Mutex<ChaCha8Rng>,
}

enum Attempt {
    Done(ModelResponse),
    Retry {
        error: BackendError,
        after: Option<Duration>,
    },
}

impl RemoteBackend {
    /// Reads the API key from the configured environment variable.
    pub fn new(cfg: RemoteConfig) -> Result<Self, BackendError> {
        let api_key = std::env::var(&cfg.api_key_env).map_err(|_| {
            BackendError::Auth(format!("environment variable {} is not set", cfg.api_key_env))
        })?;
        Self::with_key(cfg, api_key)
    }

    pub fn with_key(cfg: RemoteConfig, api_key: String) -> Result<Self, BackendError> {
        if cfg.max_attempts == 0 || cfg.max_in_flight == 0 {
            return Err(BackendError::Transport(
                "max_attempts and max_in_flight must be at least 1".into(),
            ));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let url = format!("{}/chat/completions", cfg.endpoint.trim_end_matches('/'));
        let gate = Gate {
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            cap: cfg.max_in_flight,
        };
        Ok(Self {
            cfg,
            url,
            api_key,
            client,
            gate,
            next_slot: Mutex::new(Instant::now()),
            rng: Mutex::new(ChaCha8Rng::from_os_rng()),
        })
    }

    fn wait_for_slot(&self) {
        if self.cfg.min_interval_ms == 0 {
            return;
        }
        let wait = {
            let mut slot = self.next_slot.lock().expect("limiter lock");
            let now = Instant::now();
            let start = (*slot).max(now);
            *slot = start + Duration::from_millis(self.cfg.min_interval_ms);
            start - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let exp = self
            .cfg
            .base_backoff_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.cfg.max_backoff_ms);
        let jitter: f64 = self.rng.lock().expect("rng lock").random_range(0.5..=1.0);
        Duration::from_millis((exp as f64 * jitter) as u64)
    }

    fn attempt(&self, body: &Value) -> Result<Attempt, BackendError> {
        if NETWORK_FORBIDDEN.load(Ordering::SeqCst) {
            panic!("network use is forbidden in this process (request to {})", self.url);
        }
        NETWORK_ATTEMPTS.fetch_add(1, Ordering::SeqCst);
        let started = Instant::now();
        let resp = match self
            .client
            .post(&self.url)
            .bearer_auth(&self.api_key)
            .json(body)
            .send()
        {
            Ok(r) => r,
            Err(e) => {
                return Ok(Attempt::Retry {
                    error: BackendError::Transport(e.to_string()),
                    after: None,
                })
            }
        };
        let status = resp.status();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = resp
            .text()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let latency = started.elapsed();
        match status.as_u16() {
            200..=299 => {}
            401 | 403 => return Err(BackendError::Auth(format!("HTTP {status}: {}", snippet(&text)))),
            429 => {
                return Ok(Attempt::Retry {
                    error: BackendError::RateLimited { attempts: 0 },
                    after: retry_after,
                })
            }
            500..=599 => {
                return Ok(Attempt::Retry {
                    error: BackendError::Transport(format!("HTTP {status}: {}", snippet(&text))),
                    after: retry_after,
                })
            }
            _ => {
                return Err(BackendError::Transport(format!(
                    "HTTP {status}: {}",
                    snippet(&text)
                )))
            }
        }
        let (text, usage) = parse_completion(&text)?;
        Ok(Attempt::Done(ModelResponse {
            text,
            usage,
            latency,
            backend_kind: BackendKind::Remote,
        }))
    }
}

fn snippet(s: &str) -> &str {
    let end = s.char_indices().nth(200).map_or(s.len(), |(i, _)| i);
    &s[..end]
}

/// OpenAI-compatible request body; images travel as base64 data URLs.
pub(crate) fn request_body(req: &ModelRequest) -> Value {
    let b64 = base64::engine::general_purpose::STANDARD;
    let messages: Vec<Value> = req
        .messages
        .messages
        .iter()
        .map(|m| {
            let mut content: Vec<Value> = Vec::new();
            let mut pending = String::new();
            for part in &m.parts {
                match &part.content {
                    PartContent::Text(t) => pending.push_str(t),
                    PartContent::Image(img) => {
                        if !pending.is_empty() {
                            content.push(json!({"type": "text", "text": std::mem::take(&mut pending)}));
                        }
                        content.push(json!({
                            "type": "image_url",
                            "image_url": {"url": format!("data:image/png;base64,{}", b64.encode(img.bytes()))}
                        }));
                    }
                }
            }
            if !pending.is_empty() {
                content.push(json!({"type": "text", "text": pending}));
            }
            json!({"role": m.role, "content": content})
        })
        .collect();
    json!({
        "model": req.model_id,
        "messages": messages,
        "temperature": req.temperature,
        "max_tokens": req.max_output_tokens,
    })
}

pub(crate) fn parse_completion(body: &str) -> Result<(String, Option<Usage>), BackendError> {
    let schema = |m: &str| BackendError::ProviderSchema(m.to_owned());
    let v: Value = serde_json::from_str(body).map_err(|e| schema(&format!("not JSON: {e}")))?;
    let content = v
        .pointer("/choices/0/message/content")
        .ok_or_else(|| schema("missing choices[0].message.content"))?;
    let text = match content {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect(),
        Value::Null => String::new(),
        _ => return Err(schema("message content is neither a string nor a part list")),
    };
    let usage = v
        .get("usage")
        .and_then(|u| serde_json::from_value::<Usage>(u.clone()).ok());
    Ok((text, usage))
}

impl Backend for RemoteBackend {
    fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, BackendError> {
        let body = request_body(req);
        let _in_flight = self.gate.enter();
        let mut last = BackendError::Transport("no attempt made".into());
        for attempt in 0..self.cfg.max_attempts {
            self.wait_for_slot();
            match self.attempt(&body)? {
                Attempt::Done(resp) => return Ok(resp),
                Attempt::Retry { error, after } => {
                    last = error;
                    if attempt + 1 < self.cfg.max_attempts {
                        let wait = after
                            .map(|d| d.min(Duration::from_millis(self.cfg.max_backoff_ms)))
                            .unwrap_or_else(|| self.backoff(attempt));
                        std::thread::sleep(wait);
                    }
                }
            }
        }
        Err(match last {
            BackendError::RateLimited { .. } => BackendError::RateLimited {
                attempts: self.cfg.max_attempts,
            },
            other => other,
        })
    }

    fn identity(&self) -> BackendIdentity {
        BackendIdentity {
            kind: BackendKind::Remote,
            endpoint: Some(self.cfg.endpoint.clone()),
            detail: None,
        }
    }
}
