//! Model invocation: one trait, three implementations.
//!
//! * [`ScriptedBackend`] answers from a queue, closure or script file.
//! * [`RemoteBackend`] speaks the OpenAI-compatible chat-completions shape.
//! * [`ReplayBackend`] answers from a recorded transcript; [`RecordingBackend`]
//!   writes one.

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::message::{sha256_hex, CanonicalMessage, MessageSeq};

mod remote;
mod scripted;
mod transcript;

pub use remote::{network_attempts, set_network_forbidden, RemoteBackend, RemoteConfig};
pub use scripted::{Script, ScriptedBackend, StageScript};
pub use transcript::{
    read_transcript, RecordedPart, RecordedRequest, RecordingBackend, ReplayBackend,
    TranscriptEntry, TranscriptStore, BLOB_DIR, TRANSCRIPT_FILE,
};

pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 8192;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider response did not match the expected schema: {0}")]
    ProviderSchema(String),
    #[error("no recorded response for request {tag} (digest {digest})")]
    ReplayMiss { digest: String, tag: String },
    #[error("transcript storage: {0}")]
    Storage(String),
    #[error("request {tag} would reveal ground truth")]
    GroundTruthLeak { tag: String },
    #[error("scripted backend has no response for {0}")]
    ScriptExhausted(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    Scripted,
    Replay,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Remote => "remote",
            BackendKind::Scripted => "scripted",
            BackendKind::Replay => "replay",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "remote" => Ok(BackendKind::Remote),
            "scripted" => Ok(BackendKind::Scripted),
            "replay" => Ok(BackendKind::Replay),
            other => Err(format!(
                "unknown backend {other:?} (expected remote, scripted or replay)"
            )),
        }
    }
}

/// Pipeline stage a request belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Baseline,
    Summarize,
    Apply,
    Verify,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Baseline => "baseline",
            Stage::Summarize => "summarize",
            Stage::Apply => "apply",
            Stage::Verify => "verify",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "baseline" => Stage::Baseline,
            "summarize" => Stage::Summarize,
            "apply" => Stage::Apply,
            "verify" => Stage::Verify,
            _ => return None,
        })
    }
}

/// Structured request tag: `task/summarize`, `task/t0/baseline`,
/// `task/t0/apply/r1`, `task/t0/verify/r2`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RequestTag {
    pub task_id: String,
    pub test_index: Option<usize>,
    pub stage: Stage,
    /// One-based round for apply/verify.
    pub round: Option<usize>,
}

impl RequestTag {
    pub fn summarize(task_id: &str) -> Self {
        Self {
            task_id: task_id.to_owned(),
            test_index: None,
            stage: Stage::Summarize,
            round: None,
        }
    }

    pub fn baseline(task_id: &str, test_index: usize) -> Self {
        Self {
            task_id: task_id.to_owned(),
            test_index: Some(test_index),
            stage: Stage::Baseline,
            round: None,
        }
    }

    pub fn round(task_id: &str, test_index: usize, stage: Stage, round: usize) -> Self {
        Self {
            task_id: task_id.to_owned(),
            test_index: Some(test_index),
            stage,
            round: Some(round),
        }
    }

    pub fn parse(tag: &str) -> Option<Self> {
        let mut parts: Vec<&str> = tag.rsplitn(4, '/').collect();
        parts.reverse();
        let round = parts
            .last()
            .and_then(|p| p.strip_prefix('r'))
            .and_then(|n| n.parse::<usize>().ok());
        if round.is_some() {
            parts.pop();
        }
        let stage = Stage::parse(parts.pop()?)?;
        let test_index = match parts.last().and_then(|p| p.strip_prefix('t')) {
            Some(n) if parts.len() >= 2 => {
                let i = n.parse().ok();
                if i.is_some() {
                    parts.pop();
                }
                i
            }
            _ => None,
        };
        let task_id = parts.join("/");
        if task_id.is_empty() {
            return None;
        }
        Some(Self {
            task_id,
            test_index,
            stage,
            round,
        })
    }
}

impl fmt::Display for RequestTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.task_id)?;
        if let Some(i) = self.test_index {
            write!(f, "/t{i}")?;
        }
        write!(f, "/{}", self.stage.as_str())?;
        if let Some(r) = self.round {
            write!(f, "/r{r}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRequest {
    pub model_id: String,
    pub messages: MessageSeq,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub request_tag: String,
}

#[derive(Serialize)]
struct DigestInput<'a> {
    model_id: &'a str,
    messages: Vec<CanonicalMessage>,
    temperature: f64,
}

impl ModelRequest {
    pub fn new(model_id: impl Into<String>, messages: MessageSeq, tag: impl fmt::Display) -> Self {
        Self {
            model_id: model_id.into(),
            messages,
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            request_tag: tag.to_string(),
        }
    }

    /// Hash of model id, canonical message content and temperature.
    pub fn digest(&self) -> String {
        request_digest(&self.model_id, self.messages.canonical(), self.temperature)
    }
}

pub(crate) fn request_digest(model_id: &str, messages: Vec<CanonicalMessage>, temperature: f64) -> String {
    let input = DigestInput {
        model_id,
        messages,
        temperature,
    };
    let bytes = serde_json::to_vec(&input).expect("digest input serializes");
    sha256_hex(&bytes)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_tokens: Option<u64>,
}

impl Usage {
    pub fn add(&mut self, other: &Usage) {
        fn sum(a: Option<u64>, b: Option<u64>) -> Option<u64> {
            match (a, b) {
                (None, None) => None,
                (a, b) => Some(a.unwrap_or(0) + b.unwrap_or(0)),
            }
        }
        self.prompt_tokens = sum(self.prompt_tokens, other.prompt_tokens);
        self.completion_tokens = sum(self.completion_tokens, other.completion_tokens);
        self.total_tokens = sum(self.total_tokens, other.total_tokens);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
    #[serde(rename = "latency_ms", with = "duration_ms")]
    pub latency: Duration,
    pub backend_kind: BackendKind,
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// What the manifest records about the backend that served a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendIdentity {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

pub trait Backend: Send + Sync {
    fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, BackendError>;

    fn identity(&self) -> BackendIdentity;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, BackendError> {
        (**self).complete(req)
    }

    fn identity(&self) -> BackendIdentity {
        (**self).identity()
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, BackendError> {
        (**self).complete(req)
    }

    fn identity(&self) -> BackendIdentity {
        (**self).identity()
    }
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, BackendError> {
        (**self).complete(req)
    }

    fn identity(&self) -> BackendIdentity {
        (**self).identity()
    }
}
