//! Reasoning modes: direct baseline, rule summarization + application, and
//! the self-correction loop with a vision (MSSC) or text (TOSC) critic.
//!
//! The pipeline only ever sees a [`TaskView`], so test outputs cannot reach
//! a prompt through it.

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, ModelRequest, RequestTag, Stage, Usage};
use crate::extract::{parse_matrix_answer, parse_rule, parse_verdict, RuleText, Verdict};
use crate::grid::{Grid, TaskView};
use crate::prompt::{Modality, PromptArgs, PromptError, PromptFamily, PromptKit, TemplateSet};
use crate::render::RenderConfig;

pub use crate::prompt::Feedback;

pub const DEFAULT_N_MAX: usize = 3;
pub const DEFAULT_MODEL_ID: &str = "gpt-4o";
pub const NO_PREDICTION_RATIONALE: &str = "no parsable prediction";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("rule summarization failed: {0}")]
    SummarizationFailed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Baseline,
    Vlsr,
    VlsrMssc,
    VlsrTosc,
    Ablation,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Baseline,
        Mode::Vlsr,
        Mode::VlsrMssc,
        Mode::VlsrTosc,
        Mode::Ablation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Vlsr => "vlsr",
            Mode::VlsrMssc => "vlsr_mssc",
            Mode::VlsrTosc => "vlsr_tosc",
            Mode::Ablation => "ablation",
        }
    }

    pub fn is_self_correct(self) -> bool {
        matches!(self, Mode::VlsrMssc | Mode::VlsrTosc)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                format!("unknown mode {s:?} (expected baseline, vlsr, vlsr_mssc, vlsr_tosc or ablation)")
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub sum_modality: Modality,
    pub app_modality: Modality,
    pub verify_modality: Modality,
    pub n_max: usize,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub model_id: String,
    pub render: RenderConfig,
}

impl PipelineConfig {
    /// Canonical modalities for `mode`; ablation starts at the vision/text arm.
    pub fn for_mode(mode: Mode) -> Self {
        let verify_modality = match mode {
            Mode::VlsrTosc => Modality::Text,
            _ => Modality::Vision,
        };
        Self {
            mode,
            sum_modality: Modality::Vision,
            app_modality: Modality::Text,
            verify_modality,
            n_max: DEFAULT_N_MAX,
            temperature: crate::backend::DEFAULT_TEMPERATURE,
            max_output_tokens: crate::backend::DEFAULT_MAX_OUTPUT_TOKENS,
            model_id: DEFAULT_MODEL_ID.into(),
            render: RenderConfig::default(),
        }
    }

    pub fn ablation(sum: Modality, app: Modality) -> Self {
        Self {
            sum_modality: sum,
            app_modality: app,
            ..Self::for_mode(Mode::Ablation)
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.n_max == 0 {
            return bad("n_max must be at least 1".into());
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return bad(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if self.model_id.trim().is_empty() {
            return bad("model id is empty".into());
        }
        if matches!(self.mode, Mode::Vlsr | Mode::VlsrMssc | Mode::VlsrTosc)
            && (self.sum_modality != Modality::Vision || self.app_modality != Modality::Text)
        {
            return bad(format!(
                "mode {} summarizes with vision and applies with text",
                self.mode
            ));
        }
        match (self.mode, self.verify_modality) {
            (Mode::VlsrMssc, Modality::Text) => bad("vlsr_mssc verifies with vision".into()),
            (Mode::VlsrTosc, Modality::Vision) => bad("vlsr_tosc verifies with text".into()),
            _ => Ok(()),
        }?;
        self.render
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }
}

/// One apply (+ verify) round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub prediction: Option<Grid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RoundRecord {
    fn from_prediction(prediction: Option<Grid>, error: Option<String>) -> Self {
        Self {
            prediction,
            verdict: None,
            rationale: None,
            error,
        }
    }
}

/// All rounds for one test input of a task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestAttempt {
    pub test_index: usize,
    pub rounds: Vec<RoundRecord>,
    pub final_prediction: Option<Grid>,
}

impl TestAttempt {
    fn new(test_index: usize, rounds: Vec<RoundRecord>) -> Self {
        let final_prediction = rounds.last().and_then(|r| r.prediction.clone());
        Self {
            test_index,
            rounds,
            final_prediction,
        }
    }

    /// The prediction the pipeline would have returned had it stopped after
    /// `round` (one-based).
    pub fn prediction_at(&self, round: usize) -> Option<&Grid> {
        let n = round.min(self.rounds.len());
        n.checked_sub(1)
            .and_then(|i| self.rounds[i].prediction.as_ref())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTimings {
    pub baseline_ms: u64,
    pub summarize_ms: u64,
    pub apply_ms: u64,
    pub verify_ms: u64,
}

impl StageTimings {
    fn add(&mut self, stage: Stage, latency: Duration) {
        let ms = latency.as_millis() as u64;
        let slot = match stage {
            Stage::Baseline => &mut self.baseline_ms,
            Stage::Summarize => &mut self.summarize_ms,
            Stage::Apply => &mut self.apply_ms,
            Stage::Verify => &mut self.verify_ms,
        };
        *slot += ms;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub tag: String,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub mode: Mode,
    pub rule: Option<RuleText>,
    pub attempts: Vec<TestAttempt>,
    /// Set when a vlsr-family mode fell back to the baseline.
    #[serde(default)]
    pub degraded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub timings: StageTimings,
    pub calls: Vec<CallRecord>,
    #[serde(default)]
    pub usage: Usage,
}

impl TaskResult {
    pub fn new(task_id: &str, mode: Mode) -> Self {
        Self {
            task_id: task_id.to_owned(),
            mode,
            rule: None,
            attempts: Vec::new(),
            degraded: false,
            error: None,
            timings: StageTimings::default(),
            calls: Vec::new(),
            usage: Usage::default(),
        }
    }

    pub fn call_count(&self) -> usize {
        self.calls.len()
    }

    pub fn calls_in_stage(&self, stage: Stage) -> usize {
        self.calls
            .iter()
            .filter(|c| RequestTag::parse(&c.tag).is_some_and(|t| t.stage == stage))
            .count()
    }

    /// Final predictions in test order.
    pub fn final_predictions(&self) -> Vec<Option<&Grid>> {
        self.attempts.iter().map(|a| a.final_prediction.as_ref()).collect()
    }

    fn note_error(&mut self, msg: String) {
        if self.error.is_none() {
            self.error = Some(msg);
        }
    }
}

pub struct Pipeline {
    kit: PromptKit,
    cfg: PipelineConfig,
}

impl Pipeline {
    pub fn new(templates: TemplateSet, cfg: PipelineConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let kit = PromptKit::new(templates, cfg.render.clone())?;
        Ok(Self { kit, cfg })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn kit(&self) -> &PromptKit {
        &self.kit
    }

    /// Runs the configured mode. Stage failures are recorded in the result
    /// rather than returned.
    pub fn run(&self, task: &TaskView<'_>, backend: &dyn Backend) -> TaskResult {
        match self.cfg.mode {
            Mode::Baseline => self.run_baseline(task, backend),
            Mode::Vlsr | Mode::Ablation => self.run_ablation(task, backend),
            Mode::VlsrMssc | Mode::VlsrTosc => self.run_selfcorrect(task, backend),
        }
    }

    fn call(
        &self,
        backend: &dyn Backend,
        family: PromptFamily,
        task: &TaskView<'_>,
        args: &PromptArgs<'_>,
        tag: RequestTag,
        out: &mut TaskResult,
    ) -> Result<String, PipelineError> {
        let messages = self.kit.build(family, task, args)?;
        let req = ModelRequest {
            model_id: self.cfg.model_id.clone(),
            messages,
            temperature: self.cfg.temperature,
            max_output_tokens: self.cfg.max_output_tokens,
            request_tag: tag.to_string(),
        };
        out.calls.push(CallRecord {
            tag: req.request_tag.clone(),
            digest: req.digest(),
        });
        let resp = backend.complete(&req)?;
        out.timings.add(tag.stage, resp.latency);
        if let Some(u) = &resp.usage {
            out.usage.add(u);
        }
        Ok(resp.text)
    }

    /// Direct text prediction, one call per test input.
    pub fn run_baseline(&self, task: &TaskView<'_>, backend: &dyn Backend) -> TaskResult {
        let mut out = TaskResult::new(task.id(), self.cfg.mode);
        self.baseline_into(task, backend, &mut out);
        out
    }

    fn baseline_into(&self, task: &TaskView<'_>, backend: &dyn Backend, out: &mut TaskResult) {
        out.attempts.clear();
        for i in 0..task.test_inputs().len() {
            let args = PromptArgs {
                test_index: i,
                ..Default::default()
            };
            let tag = RequestTag::baseline(task.id(), i);
            let round = match self.call(backend, PromptFamily::TextBaseline, task, &args, tag, out) {
                Ok(text) => match parse_matrix_answer(&text) {
                    Ok(g) => RoundRecord::from_prediction(Some(g), None),
                    Err(e) => RoundRecord::from_prediction(None, Some(e.to_string())),
                },
                Err(e) => {
                    out.note_error(e.to_string());
                    RoundRecord::from_prediction(None, Some(e.to_string()))
                }
            };
            out.attempts.push(TestAttempt::new(i, vec![round]));
        }
    }

    pub fn summarize_rule(
        &self,
        task: &TaskView<'_>,
        backend: &dyn Backend,
        modality: Modality,
        out: &mut TaskResult,
    ) -> Result<RuleText, PipelineError> {
        let text = self.call(
            backend,
            PromptFamily::summarization(modality),
            task,
            &PromptArgs::default(),
            RequestTag::summarize(task.id()),
            out,
        )?;
        parse_rule(&text).map_err(|e| PipelineError::SummarizationFailed(e.to_string()))
    }

    /// One application call; `Ok(None)` when the reply holds no usable matrix.
    #[allow(clippy::too_many_arguments)]
    pub fn apply_rule(
        &self,
        task: &TaskView<'_>,
        test_index: usize,
        rule: &RuleText,
        backend: &dyn Backend,
        modality: Modality,
        feedback: Option<&Feedback>,
        round: usize,
        out: &mut TaskResult,
    ) -> Result<(Option<Grid>, Option<String>), PipelineError> {
        let family = match (feedback, modality) {
            (Some(_), Modality::Text) => PromptFamily::RefinementText,
            _ => PromptFamily::application(modality),
        };
        let args = PromptArgs {
            test_index,
            rule: Some(rule),
            prediction: None,
            feedback,
        };
        let tag = RequestTag::round(task.id(), test_index, Stage::Apply, round);
        let text = self.call(backend, family, task, &args, tag, out)?;
        Ok(match parse_matrix_answer(&text) {
            Ok(g) => (Some(g), None),
            Err(e) => (None, Some(e.to_string())),
        })
    }

    /// Asks the critic whether `prediction` follows the examples. An absent
    /// prediction is judged `no` without a call.
    #[allow(clippy::too_many_arguments)]
    pub fn verify(
        &self,
        task: &TaskView<'_>,
        test_index: usize,
        prediction: Option<&Grid>,
        backend: &dyn Backend,
        modality: Modality,
        round: usize,
        out: &mut TaskResult,
    ) -> Result<(Verdict, String), PipelineError> {
        let Some(prediction) = prediction else {
            return Ok((Verdict::synthetic_no(), NO_PREDICTION_RATIONALE.to_owned()));
        };
        let args = PromptArgs {
            test_index,
            prediction: Some(prediction),
            ..Default::default()
        };
        let tag = RequestTag::round(task.id(), test_index, Stage::Verify, round);
        let text = self.call(
            backend,
            PromptFamily::verification(modality),
            task,
            &args,
            tag,
            out,
        )?;
        Ok((parse_verdict(&text), text))
    }

    /// Summarizes once, or falls back to the baseline and marks the result
    /// degraded.
    fn rule_or_fallback(
        &self,
        task: &TaskView<'_>,
        backend: &dyn Backend,
        out: &mut TaskResult,
    ) -> Option<RuleText> {
        match self.summarize_rule(task, backend, self.cfg.sum_modality, out) {
            Ok(rule) => Some(rule),
            Err(e) => {
                out.note_error(e.to_string());
                out.degraded = true;
                self.baseline_into(task, backend, out);
                None
            }
        }
    }

    /// Summarize, then apply once per test input; no verification.
    pub fn run_ablation(&self, task: &TaskView<'_>, backend: &dyn Backend) -> TaskResult {
        let mut out = TaskResult::new(task.id(), self.cfg.mode);
        let Some(rule) = self.rule_or_fallback(task, backend, &mut out) else {
            return out;
        };
        for i in 0..task.test_inputs().len() {
            let round = match self.apply_rule(
                task,
                i,
                &rule,
                backend,
                self.cfg.app_modality,
                None,
                1,
                &mut out,
            ) {
                Ok((pred, err)) => RoundRecord::from_prediction(pred, err),
                Err(e) => {
                    out.note_error(e.to_string());
                    RoundRecord::from_prediction(None, Some(e.to_string()))
                }
            };
            out.attempts.push(TestAttempt::new(i, vec![round]));
        }
        out.rule = Some(rule);
        out
    }

    /// Summarize once, then apply/verify per test input until the critic
    /// accepts or `n_max` rounds have run.
    pub fn run_selfcorrect(&self, task: &TaskView<'_>, backend: &dyn Backend) -> TaskResult {
        let mut out = TaskResult::new(task.id(), self.cfg.mode);
        let Some(rule) = self.rule_or_fallback(task, backend, &mut out) else {
            return out;
        };
        for i in 0..task.test_inputs().len() {
            let rounds = self.correction_loop(task, i, &rule, backend, &mut out);
            out.attempts.push(TestAttempt::new(i, rounds));
        }
        out.rule = Some(rule);
        out
    }

    fn correction_loop(
        &self,
        task: &TaskView<'_>,
        test_index: usize,
        rule: &RuleText,
        backend: &dyn Backend,
        out: &mut TaskResult,
    ) -> Vec<RoundRecord> {
        let mut rounds = Vec::new();
        let mut feedback: Option<Feedback> = None;
        for round in 1..=self.cfg.n_max {
            let (prediction, parse_error) = match self.apply_rule(
                task,
                test_index,
                rule,
                backend,
                self.cfg.app_modality,
                feedback.as_ref(),
                round,
                out,
            ) {
                Ok(p) => p,
                Err(e) => {
                    out.note_error(e.to_string());
                    rounds.push(RoundRecord::from_prediction(None, Some(e.to_string())));
                    break;
                }
            };
            let (verdict, rationale) = match self.verify(
                task,
                test_index,
                prediction.as_ref(),
                backend,
                self.cfg.verify_modality,
                round,
                out,
            ) {
                Ok(v) => v,
                Err(e) => {
                    out.note_error(e.to_string());
                    rounds.push(RoundRecord::from_prediction(prediction, Some(e.to_string())));
                    break;
                }
            };
            let accepted = verdict.is_yes();
            rounds.push(RoundRecord {
                prediction: prediction.clone(),
                verdict: Some(verdict),
                rationale: Some(rationale.clone()),
                error: parse_error,
            });
            if accepted {
                break;
            }
            feedback = Some(Feedback {
                previous_prediction: prediction,
                critic_rationale: rationale,
                round_index: round - 1,
            });
        }
        rounds
    }
}
