//! Batch execution: manifest, concurrent task workers, resumable result
//! stream, ground-truth audit and final reports.
//!
//! Output directory layout:
//!
//! ```text
//! manifest.json          written before the first backend call
//! truth.jsonl            tasks with ground truth, for offline scoring
//! results.partial.jsonl  one line per finished task, in completion order
//! results.jsonl          final results sorted by task id
//! report.{json,csv,md}
//! run_end.json           end timestamp and completion counts
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, BackendIdentity, ModelRequest, ModelResponse};
use crate::dataset::DatasetSpec;
use crate::eval::{aggregate, emit, EvalError, ReportFormat, ReportMeta, RunReport};
use crate::grid::Task;
use crate::message::sha256_hex;
use crate::pipeline::{Mode, Pipeline, PipelineConfig, PipelineError, TaskResult};
use crate::prompt::{audit_no_ground_truth, TemplateSet};
use crate::render::{Palette, RenderConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RUN_END_FILE: &str = "run_end.json";
pub const TRUTH_FILE: &str = "truth.jsonl";
pub const PARTIAL_RESULTS_FILE: &str = "results.partial.jsonl";
pub const RESULTS_FILE: &str = "results.jsonl";
pub const REPORT_STEM: &str = "report";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path} holds run {found}, not {expected}; use a fresh output directory")]
    ManifestMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{0}")]
    Invalid(String),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Io {
        path: path.to_owned(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub run_id: String,
    pub started_at: String,
    pub config: PipelineConfig,
    pub dataset: DatasetSpec,
    pub task_ids: Vec<String>,
    pub template_checksum: String,
    pub palette: Palette,
    pub geometry: Geometry,
    pub backend: BackendIdentity,
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub cell_px: u32,
    pub line_px: u32,
    pub border: bool,
}

impl From<&RenderConfig> for Geometry {
    fn from(r: &RenderConfig) -> Self {
        Self {
            cell_px: r.cell_px,
            line_px: r.line_px,
            border: r.border,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunEnd {
    pub run_id: String,
    pub ended_at: String,
    pub completed: usize,
    pub total: usize,
    pub interrupted: bool,
}

/// Declared defaults recorded in every manifest.
pub fn default_notes(cfg: &PipelineConfig) -> Vec<String> {
    let mut notes = vec![
        "no system prompt is sent".to_owned(),
        format!("max_output_tokens = {}", cfg.max_output_tokens),
        "multi-test tasks are scored all-or-nothing; per-pair accuracy is reported separately"
            .to_owned(),
        "the rule is summarized once per task and never re-summarized during refinement".to_owned(),
    ];
    if cfg.mode == Mode::VlsrTosc {
        notes.push(
            "text-only verification mirrors the vision verification wording with matrices as text"
                .to_owned(),
        );
    }
    notes
}

/// Stable id over everything that determines the requests of a run; the
/// backend kind is deliberately excluded so a replay keeps the recorded id.
pub fn compute_run_id(
    cfg: &PipelineConfig,
    dataset: &DatasetSpec,
    task_ids: &[String],
    template_checksum: &str,
) -> String {
    let doc = serde_json::json!({
        "config": cfg,
        "dataset": dataset,
        "task_ids": task_ids,
        "templates": template_checksum,
    });
    let bytes = serde_json::to_vec(&doc).expect("run id input serializes");
    sha256_hex(&bytes)[..16].to_owned()
}

#[derive(Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub workers: usize,
    pub notes: Vec<String>,
    /// Pass@1 shown in the Base column of self-correct reports.
    pub base_pass_at_1: Option<f64>,
    /// Checked before each task starts; set to stop after in-flight tasks.
    pub stop: Arc<AtomicBool>,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            workers: 4,
            notes: Vec::new(),
            base_pass_at_1: None,
            stop: Arc::new(AtomicBool::new(false)),
        }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub results: Vec<TaskResult>,
    pub report: Option<RunReport>,
    /// Tasks skipped because a previous invocation finished them.
    pub resumed: usize,
    pub audited_requests: usize,
    pub leaks: usize,
    pub interrupted: bool,
}

#[derive(Default)]
struct AuditStats {
    audited: AtomicUsize,
    leaks: AtomicUsize,
}

/// Refuses any request that carries the task's ground truth.
struct AuditedBackend<'a> {
    inner: &'a dyn Backend,
    task: &'a Task,
    render: &'a RenderConfig,
    stats: &'a AuditStats,
}

impl Backend for AuditedBackend<'_> {
    fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, BackendError> {
        self.stats.audited.fetch_add(1, Ordering::SeqCst);
        if !audit_no_ground_truth(&req.messages, self.task, self.render) {
            self.stats.leaks.fetch_add(1, Ordering::SeqCst);
            return Err(BackendError::GroundTruthLeak {
                tag: req.request_tag.clone(),
            });
        }
        self.inner.complete(req)
    }

    fn identity(&self) -> BackendIdentity {
        self.inner.identity()
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    s.push('\n');
    fs::write(path, s).map_err(|e| io_err(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), RunError> {
    let mut s = String::new();
    for item in items {
        s.push_str(&serde_json::to_string(item).map_err(|e| io_err(path, e))?);
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| io_err(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path, tolerate_torn_tail: bool) -> Result<Vec<T>, RunError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    let last = lines.len().saturating_sub(1);
    for (n, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            // a write cut short by an interrupt leaves a torn last line
            Err(_) if tolerate_torn_tail && n == last => {}
            Err(e) => return Err(io_err(path, format!("line {}: {e}", n + 1))),
        }
    }
    Ok(out)
}

pub fn load_manifest(dir: &Path) -> Result<RunManifest, RunError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(&path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<TaskResult>, RunError> {
    read_jsonl(path, false)
}

pub fn read_truth(path: &Path) -> Result<Vec<Task>, RunError> {
    read_jsonl(path, false)
}

pub fn read_report(path: &Path) -> Result<RunReport, RunError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

pub fn report_meta(manifest: &RunManifest) -> ReportMeta {
    let cfg = &manifest.config;
    ReportMeta {
        run_id: manifest.run_id.clone(),
        mode: cfg.mode,
        model_id: cfg.model_id.clone(),
        dataset: manifest.dataset.source.as_str().to_owned(),
        n_max: cfg.n_max,
        arm: (cfg.mode == Mode::Ablation).then_some((cfg.sum_modality, cfg.app_modality)),
        config: serde_json::json!({
            "sum_modality": cfg.sum_modality,
            "app_modality": cfg.app_modality,
            "verify_modality": cfg.verify_modality,
            "n_max": cfg.n_max,
            "temperature": cfg.temperature,
            "seed": manifest.dataset.seed,
            "sample_size": manifest.dataset.sample_size,
        }),
    }
}

/// Writes `report.json`, `report.csv` and `report.md` into `dir`.
pub fn write_reports(dir: &Path, report: &RunReport) -> Result<(), RunError> {
    for format in [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Markdown] {
        let path = dir.join(format!("{REPORT_STEM}.{}", format.extension()));
        let doc = emit(report, format)?;
        fs::write(&path, doc).map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

/// Re-scores a finished run directory from its own files.
pub fn score_dir(dir: &Path) -> Result<RunReport, RunError> {
    let manifest = load_manifest(dir)?;
    let results = read_results(&dir.join(RESULTS_FILE))?;
    let truths = read_truth(&dir.join(TRUTH_FILE))?;
    Ok(aggregate(&results, &truths, report_meta(&manifest))?)
}

pub fn run(
    tasks: &[Task],
    backend: &dyn Backend,
    templates: TemplateSet,
    cfg: PipelineConfig,
    dataset: DatasetSpec,
    opts: &RunOptions,
) -> Result<RunOutcome, RunError> {
    if opts.workers == 0 {
        return Err(RunError::Invalid("workers must be at least 1".into()));
    }
    let mut seen = HashSet::new();
    for t in tasks {
        if !seen.insert(t.id.as_str()) {
            return Err(RunError::Invalid(format!("duplicate task id {}", t.id)));
        }
    }
    let template_checksum = templates.checksum();
    let pipeline = Pipeline::new(templates, cfg.clone())?;

    let mut task_ids: Vec<String> = tasks.iter().map(|t| t.id.clone()).collect();
    task_ids.sort();
    let run_id = compute_run_id(&cfg, &dataset, &task_ids, &template_checksum);
    let out = &opts.out_dir;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let manifest_path = out.join(MANIFEST_FILE);

    let manifest = if manifest_path.exists() {
        let existing = load_manifest(out)?;
        if existing.run_id != run_id {
            return Err(RunError::ManifestMismatch {
                path: manifest_path,
                expected: run_id,
                found: existing.run_id,
            });
        }
        existing
    } else {
        let mut notes = default_notes(&cfg);
        notes.extend(opts.notes.iter().cloned());
        let manifest = RunManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            run_id: run_id.clone(),
            started_at: now(),
            palette: cfg.render.palette.clone(),
            geometry: Geometry::from(&cfg.render),
            config: cfg.clone(),
            dataset,
            task_ids: task_ids.clone(),
            template_checksum,
            backend: backend.identity(),
            notes,
        };
        write_json(&manifest_path, &manifest)?;
        manifest
    };

    let mut sorted_tasks: Vec<&Task> = tasks.iter().collect();
    sorted_tasks.sort_by(|a, b| a.id.cmp(&b.id));
    write_jsonl(&out.join(TRUTH_FILE), &sorted_tasks)?;

    let partial_path = out.join(PARTIAL_RESULTS_FILE);
    let mut done: BTreeMap<String, TaskResult> = BTreeMap::new();
    if partial_path.exists() {
        for r in read_jsonl::<TaskResult>(&partial_path, true)? {
            done.entry(r.task_id.clone()).or_insert(r);
        }
        // rewrite so a torn tail does not corrupt later appends
        let kept: Vec<&TaskResult> = done.values().collect();
        write_jsonl(&partial_path, &kept)?;
    }
    let resumed = done.len();
    let pending: Vec<&Task> = sorted_tasks
        .iter()
        .copied()
        .filter(|t| !done.contains_key(&t.id))
        .collect();

    let sink = Mutex::new(
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&partial_path)
            .map_err(|e| io_err(&partial_path, e))?,
    );
    let stats = AuditStats::default();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| RunError::Invalid(e.to_string()))?;
    let fresh: Vec<TaskResult> = pool.install(|| {
        pending
            .par_iter()
            .map(|task| -> Result<Option<TaskResult>, RunError> {
                if opts.stop.load(Ordering::SeqCst) {
                    return Ok(None);
                }
                let audited = AuditedBackend {
                    inner: backend,
                    task,
                    render: &cfg.render,
                    stats: &stats,
                };
                let result = pipeline.run(&task.redacted(), &audited);
                let mut line = serde_json::to_vec(&result).map_err(|e| io_err(&partial_path, e))?;
                line.push(b'\n');
                let mut f = sink.lock().expect("result sink lock");
                f.write_all(&line).map_err(|e| io_err(&partial_path, e))?;
                f.flush().map_err(|e| io_err(&partial_path, e))?;
                Ok(Some(result))
            })
            .filter_map(Result::transpose)
            .collect::<Result<Vec<_>, _>>()
    })?;
    for r in fresh {
        done.insert(r.task_id.clone(), r);
    }

    let interrupted = done.len() < tasks.len();
    let results: Vec<TaskResult> = done.into_values().collect();
    let report = if interrupted {
        None
    } else {
        write_jsonl(&out.join(RESULTS_FILE), &results)?;
        let mut report = aggregate(&results, tasks, report_meta(&manifest))?;
        if cfg.mode.is_self_correct() {
            report.base_pass_at_1 = opts.base_pass_at_1;
        }
        write_reports(out, &report)?;
        Some(report)
    };
    write_json(
        &out.join(RUN_END_FILE),
        &RunEnd {
            run_id: manifest.run_id.clone(),
            ended_at: now(),
            completed: results.len(),
            total: tasks.len(),
            interrupted,
        },
    )?;
    Ok(RunOutcome {
        manifest,
        results,
        report,
        resumed,
        audited_requests: stats.audited.load(Ordering::SeqCst),
        leaks: stats.leaks.load(Ordering::SeqCst),
        interrupted,
    })
}
