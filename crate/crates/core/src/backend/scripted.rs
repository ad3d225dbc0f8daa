use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    Backend, BackendError, BackendIdentity, BackendKind, ModelRequest, ModelResponse, RequestTag,
    Stage,
};

/// Replies per stage. Lists are indexed by round (one-based rounds map to
/// index `round - 1`); the last entry repeats once a list runs out.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageScript {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub baseline: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub summarize: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub apply: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub verify: Vec<String>,
}

impl StageScript {
    fn pick(&self, stage: Stage, round: Option<usize>) -> Option<&String> {
        let list = match stage {
            Stage::Baseline => &self.baseline,
            Stage::Summarize => &self.summarize,
            Stage::Apply => &self.apply,
            Stage::Verify => &self.verify,
        };
        let idx = round.unwrap_or(1).saturating_sub(1);
        list.get(idx).or_else(|| list.last())
    }
}

/// Declarative script, usually loaded from JSON.
///
/// Lookup order: exact request tag, then the task's own stage script, then
/// the shared stage script, then `default`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_tag: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_task: BTreeMap<String, StageScript>,
    #[serde(default)]
    pub by_stage: StageScript,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<String>,
}

impl Script {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Storage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| BackendError::Storage(format!("{}: invalid script: {e}", path.display())))
    }

    pub fn reply(&self, request_tag: &str) -> Option<&str> {
        if let Some(r) = self.by_tag.get(request_tag) {
            return Some(r);
        }
        if let Some(tag) = RequestTag::parse(request_tag) {
            let from_task = self
                .by_task
                .get(&tag.task_id)
                .and_then(|s| s.pick(tag.stage, tag.round));
            if let Some(r) = from_task.or_else(|| self.by_stage.pick(tag.stage, tag.round)) {
                return Some(r);
            }
        }
        self.default.as_deref()
    }
}

type ReplyFn = dyn Fn(&ModelRequest) -> Result<String, BackendError> + Send + Sync;

enum Source {
    Queue(Mutex<VecDeque<String>>),
    Func(Box<ReplyFn>),
    Script(Script),
}

/// Deterministic backend for tests and offline runs. Every request is kept
/// for inspection.
pub struct ScriptedBackend {
    source: Source,
    captured: Mutex<Vec<ModelRequest>>,
    label: String,
}

impl ScriptedBackend {
    /// Answers requests with `replies` in order.
    pub fn queue<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::with_source(
            Source::Queue(Mutex::new(replies.into_iter().map(Into::into).collect())),
            "queue",
        )
    }

    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&ModelRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    {
        Self::with_source(Source::Func(Box::new(f)), "fn")
    }

    pub fn from_script(script: Script) -> Self {
        Self::with_source(Source::Script(script), "script")
    }

    fn with_source(source: Source, label: &str) -> Self {
        Self {
            source,
            captured: Mutex::new(Vec::new()),
            label: label.to_owned(),
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Requests seen so far, in arrival order.
    pub fn requests(&self) -> Vec<ModelRequest> {
        self.captured.lock().expect("capture lock").clone()
    }

    pub fn call_count(&self) -> usize {
        self.captured.lock().expect("capture lock").len()
    }

    pub fn clear(&self) {
        self.captured.lock().expect("capture lock").clear();
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, BackendError> {
        self.captured.lock().expect("capture lock").push(req.clone());
        let text = match &self.source {
            Source::Queue(q) => q
                .lock()
                .expect("queue lock")
                .pop_front()
                .ok_or_else(|| BackendError::ScriptExhausted(req.request_tag.clone()))?,
            Source::Func(f) => f(req)?,
            Source::Script(s) => s
                .reply(&req.request_tag)
                .map(str::to_owned)
                .ok_or_else(|| BackendError::ScriptExhausted(req.request_tag.clone()))?,
        };
        Ok(ModelResponse {
            text,
            usage: None,
            latency: Duration::ZERO,
            backend_kind: BackendKind::Scripted,
        })
    }

    fn identity(&self) -> BackendIdentity {
        BackendIdentity {
            kind: BackendKind::Scripted,
            endpoint: None,
            detail: Some(self.label.clone()),
        }
    }
}
