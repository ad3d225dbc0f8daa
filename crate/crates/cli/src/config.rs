//! Run settings: command-line flags layered over an optional config file.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use modal_arc::pipeline::PipelineConfig;
use modal_arc::{
    BackendKind, DatasetSource, DatasetSpec, Modality, Mode, RemoteConfig, RenderConfig,
    SampleSize,
};
use serde::Deserialize;

use crate::CliError;

/// Flags shared by `run`, `record` and `ablate`. Every flag is optional so
/// that a config file can supply it instead.
#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    /// JSON or TOML file with the same keys as these flags (snake_case).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// baseline, vlsr, vlsr_mssc, vlsr_tosc or ablation.
    #[arg(long)]
    pub mode: Option<Mode>,
    /// arc-eval, rearc or barc.
    #[arg(long)]
    pub dataset: Option<DatasetSource>,
    /// Task file or directory of task files.
    #[arg(long)]
    pub data_path: Option<PathBuf>,
    /// Number of tasks to sample, or "all".
    #[arg(long)]
    pub sample_size: Option<SampleSize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// remote, scripted or replay.
    #[arg(long)]
    pub backend: Option<BackendKind>,
    /// Base URL of an OpenAI-compatible chat completions service.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Maximum self-correction rounds.
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long)]
    pub max_output_tokens: Option<u32>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Transcript directory: recorded into for remote/scripted, read for replay.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// Reply script for the scripted backend.
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Directory overriding some or all prompt templates.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Baseline report.json whose Pass@1 fills the Base column.
    #[arg(long)]
    pub base_report: Option<PathBuf>,
    /// Summarization modality in ablation mode.
    #[arg(long)]
    pub sum_modality: Option<Modality>,
    /// Application modality in ablation mode.
    #[arg(long)]
    pub app_modality: Option<Modality>,
}

/// Config file contents. Keys mirror the flags; `remote` and `render`
/// expose settings that have no flag.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub mode: Option<Mode>,
    pub dataset: Option<DatasetSource>,
    pub data_path: Option<PathBuf>,
    pub sample_size: Option<SampleSize>,
    pub seed: Option<u64>,
    pub backend: Option<BackendKind>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub n_max: Option<usize>,
    pub max_output_tokens: Option<u32>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub transcript: Option<PathBuf>,
    pub script: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub base_report: Option<PathBuf>,
    pub sum_modality: Option<Modality>,
    pub app_modality: Option<Modality>,
    pub remote: Option<RemoteConfig>,
    pub render: Option<RenderConfig>,
}

impl FileConfig {
    /// Parses TOML for `.toml` files and JSON otherwise.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let parsed = if path.extension().and_then(|e| e.to_str()) == Some("toml") {
            toml::from_str(&text).map_err(|e| e.to_string())
        } else {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub pipeline: PipelineConfig,
    pub dataset: DatasetSpec,
    pub data_path: Option<PathBuf>,
    pub backend: BackendKind,
    pub remote: RemoteConfig,
    pub workers: usize,
    pub out_dir: Option<PathBuf>,
    pub transcript: Option<PathBuf>,
    pub script: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub base_report: Option<PathBuf>,
}

pub const DEFAULT_WORKERS: usize = 4;
pub const DEFAULT_MODE: Mode = Mode::VlsrMssc;

impl Settings {
    /// Flags win over the file, the file wins over defaults.
    pub fn resolve(flags: &RunFlags) -> Result<Self, CliError> {
        let file = match &flags.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        Self::merge(flags, file)
    }

    pub fn merge(flags: &RunFlags, file: FileConfig) -> Result<Self, CliError> {
        macro_rules! pick {
            ($field:ident) => {
                flags.$field.clone().or(file.$field.clone())
            };
        }
        let mode = pick!(mode).unwrap_or(DEFAULT_MODE);
        let sum = pick!(sum_modality);
        let app = pick!(app_modality);
        let mut pipeline = if mode == Mode::Ablation {
            PipelineConfig::ablation(
                sum.unwrap_or(Modality::Vision),
                app.unwrap_or(Modality::Text),
            )
        } else {
            if sum.is_some() || app.is_some() {
                return Err(CliError::Config(
                    "sum_modality and app_modality only apply to mode ablation".into(),
                ));
            }
            PipelineConfig::for_mode(mode)
        };
        if let Some(m) = pick!(model) {
            pipeline.model_id = m;
        }
        if let Some(t) = pick!(temperature) {
            pipeline.temperature = t;
        }
        if let Some(n) = pick!(n_max) {
            pipeline.n_max = n;
        }
        if let Some(n) = pick!(max_output_tokens) {
            pipeline.max_output_tokens = n;
        }
        if let Some(r) = file.render.clone() {
            pipeline.render = r;
        }
        pipeline
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;

        let mut remote = file.remote.clone().unwrap_or_default();
        if let Some(e) = pick!(endpoint) {
            remote.endpoint = e;
        }
        let workers = pick!(workers).unwrap_or(DEFAULT_WORKERS);
        if workers == 0 {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        Ok(Self {
            pipeline,
            dataset: DatasetSpec {
                source: pick!(dataset).unwrap_or(DatasetSource::ArcEval),
                sample_size: pick!(sample_size).unwrap_or(SampleSize::All),
                seed: pick!(seed).unwrap_or(0),
            },
            data_path: pick!(data_path),
            backend: pick!(backend).unwrap_or(BackendKind::Remote),
            remote,
            workers,
            out_dir: pick!(out_dir),
            transcript: pick!(transcript),
            script: pick!(script),
            templates: pick!(templates),
            base_report: pick!(base_report),
        })
    }
}
