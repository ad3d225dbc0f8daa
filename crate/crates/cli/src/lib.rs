//! Command-line front end: wires datasets, backends, pipelines and reports.
//!
//! Exit codes: 0 success, 1 usage, 2 config, 3 backend, 4 data, 130 when a
//! run was interrupted and left resumable partial results.

pub mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, OnceLock};

use clap::{Args, Parser, Subcommand, ValueEnum};
use modal_arc::backend::{ReplayBackend, TranscriptStore};
use modal_arc::dataset::{self, DatasetError};
use modal_arc::eval::{self, ablation_table, comparison_table, selfcorrect_table, ReportMeta};
use modal_arc::render::{image_file_name, render_png, ImageRole};
use modal_arc::runner::{self, RunOptions, RunOutcome, MANIFEST_FILE, REPORT_STEM, TRUTH_FILE};
use modal_arc::{
    Backend, BackendError, BackendKind, Mode, Modality, PipelineConfig, PipelineError,
    RecordingBackend, RemoteBackend, RenderConfig, ReportFormat, RunError, RunReport, Script,
    ScriptedBackend, Task, TemplateSet,
};
use serde::Serialize;
use thiserror::Error;

pub use config::{FileConfig, RunFlags, Settings};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;
pub const EXIT_DATA: i32 = 4;
pub const EXIT_INTERRUPTED: i32 = 130;

/// Arm directories written by `ablate`, in table order.
pub const ABLATION_ARMS: [(Modality, Modality); 4] = [
    (Modality::Text, Modality::Text),
    (Modality::Vision, Modality::Text),
    (Modality::Text, Modality::Vision),
    (Modality::Vision, Modality::Vision),
];
pub const ABLATION_TABLE_FILE: &str = "ablation.md";
pub const RENDER_MANIFEST_FILE: &str = "render_manifest.json";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("backend: {0}")]
    Backend(String),
    #[error("data: {0}")]
    Data(String),
    #[error("interrupted: {done} of {total} tasks finished; rerun the same command to resume")]
    Interrupted { done: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Backend(_) => EXIT_BACKEND,
            CliError::Data(_) => EXIT_DATA,
            CliError::Interrupted { .. } => EXIT_INTERRUPTED,
        }
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        let msg = e.to_string();
        match e {
            RunError::Pipeline(PipelineError::Backend(_)) => CliError::Backend(msg),
            RunError::Pipeline(_) | RunError::ManifestMismatch { .. } | RunError::Invalid(_) => {
                CliError::Config(msg)
            }
            RunError::Eval(_) | RunError::Io { .. } => CliError::Data(msg),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        CliError::Backend(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "modal-arc", version, about = "Vision/text rule reasoning harness for ARC-style grid tasks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one pipeline mode over a dataset sample.
    Run(RunFlags),
    /// Like `run`, but the transcript is mandatory and always recorded.
    Record(RunFlags),
    /// Re-execute a recorded run from its manifest and transcript, offline.
    Replay(ReplayArgs),
    /// Sweep the four summarize/apply modality arms.
    Ablate(AblateArgs),
    /// Render task grids to PNG files.
    Render(RenderArgs),
    /// Re-score a finished run directory.
    Score(ScoreArgs),
    /// Build tables from report.json files.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Recorded run directory, or its manifest.json.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub transcript: PathBuf,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long, default_value_t = config::DEFAULT_WORKERS)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub flags: RunFlags,
    /// Also run the text-only baseline for the Baseline column.
    #[arg(long)]
    pub with_baseline: bool,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Task file or directory of task files.
    #[arg(long)]
    pub task: PathBuf,
    #[arg(long, default_value = "renders")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub cell_px: Option<u32>,
    #[arg(long)]
    pub line_px: Option<u32>,
    #[arg(long)]
    pub border: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Run directory holding manifest.json and results.jsonl.
    pub run_dir: PathBuf,
    /// Score against these task files instead of the run's truth.jsonl.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableKind {
    /// Each report on its own.
    Single,
    /// Models by datasets.
    Comparison,
    /// Four-arm modality ablation.
    Ablation,
    /// Base and per-round accuracy for TOSC and MSSC.
    Selfcorrect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Md,
    Json,
    Csv,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Md => ReportFormat::Markdown,
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// report.json files or run directories.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = TableKind::Single)]
    pub table: TableKind,
    #[arg(long, value_enum, default_value_t = FormatArg::Md)]
    pub format: FormatArg,
    #[arg(long)]
    pub base_report: Option<PathBuf>,
    /// Write here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Parses `args` (program name first) and executes. Returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(flags) => cmd_run(&flags, false),
        Command::Record(flags) => cmd_run(&flags, true),
        Command::Replay(args) => cmd_replay(&args),
        Command::Ablate(args) => cmd_ablate(&args),
        Command::Render(args) => cmd_render(&args),
        Command::Score(args) => cmd_score(&args),
        Command::Report(args) => cmd_report(&args),
    }
}

/// Stop flag shared with the Ctrl-C handler; installed once per process.
fn stop_flag() -> Arc<AtomicBool> {
    static STOP: OnceLock<Arc<AtomicBool>> = OnceLock::new();
    STOP.get_or_init(|| {
        let flag = Arc::new(AtomicBool::new(false));
        let handler_flag = flag.clone();
        let _ = ctrlc::set_handler(move || {
            eprintln!("interrupt received; finishing in-flight tasks");
            handler_flag.store(true, Ordering::SeqCst);
        });
        flag
    })
    .clone()
}

fn load_templates(dir: Option<&Path>) -> Result<TemplateSet, CliError> {
    match dir {
        Some(d) => TemplateSet::load_dir(d).map_err(|e| CliError::Config(e.to_string())),
        None => Ok(TemplateSet::builtin()),
    }
}

fn load_tasks(settings: &Settings) -> Result<Vec<Task>, CliError> {
    let path = settings
        .data_path
        .as_deref()
        .ok_or_else(|| CliError::Config("no dataset location; pass --data-path".into()))?;
    let pool = dataset::load_pool(path)?;
    Ok(dataset::sample_tasks(&settings.dataset, &pool)?)
}

fn base_pass_at_1(path: Option<&Path>) -> Result<Option<f64>, CliError> {
    path.map(|p| runner::read_report(&report_path(p)).map(|r| r.pass_at_1))
        .transpose()
        .map_err(CliError::from)
}

fn report_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(format!("{REPORT_STEM}.json"))
    } else {
        p.to_owned()
    }
}

/// Builds the backend for `settings`, wrapping it in a recorder when a
/// transcript is given for a live or scripted backend.
fn build_backend(settings: &Settings, record: bool) -> Result<Box<dyn Backend>, CliError> {
    let inner: Box<dyn Backend> = match settings.backend {
        BackendKind::Remote => Box::new(RemoteBackend::new(settings.remote.clone())?),
        BackendKind::Scripted => {
            let path = settings
                .script
                .as_deref()
                .ok_or_else(|| CliError::Config("the scripted backend needs --script".into()))?;
            let script = Script::load(path).map_err(|e| CliError::Config(e.to_string()))?;
            Box::new(ScriptedBackend::from_script(script))
        }
        BackendKind::Replay => {
            if record {
                return Err(CliError::Config("cannot record from a replay backend".into()));
            }
            let path = settings
                .transcript
                .as_deref()
                .ok_or_else(|| CliError::Config("the replay backend needs --transcript".into()))?;
            return Ok(Box::new(ReplayBackend::open(path)?));
        }
    };
    match &settings.transcript {
        Some(dir) => Ok(Box::new(RecordingBackend::new(inner, TranscriptStore::open(dir)?))),
        None if record => Err(CliError::Config("record needs --transcript".into())),
        None => Ok(inner),
    }
}

fn default_out_dir(cfg: &PipelineConfig, settings: &Settings, tasks: &[Task], templates: &TemplateSet) -> PathBuf {
    let mut ids: Vec<String> = tasks.iter().map(|t| t.id.clone()).collect();
    ids.sort();
    let run_id = runner::compute_run_id(cfg, &settings.dataset, &ids, &templates.checksum());
    PathBuf::from("runs").join(format!("{}-{run_id}", cfg.mode))
}

fn execute_run(
    tasks: &[Task],
    backend: &dyn Backend,
    templates: TemplateSet,
    cfg: PipelineConfig,
    settings: &Settings,
    out_dir: PathBuf,
    base: Option<f64>,
) -> Result<RunOutcome, CliError> {
    let mut opts = RunOptions::new(out_dir);
    opts.workers = settings.workers;
    opts.base_pass_at_1 = base;
    opts.stop = stop_flag();
    let outcome = runner::run(tasks, backend, templates, cfg, settings.dataset.clone(), &opts)?;
    finish(&outcome, &opts.out_dir)?;
    Ok(outcome)
}

/// Prints a summary line and turns whole-run failures into exit codes.
fn finish(outcome: &RunOutcome, dir: &Path) -> Result<(), CliError> {
    let total = outcome.manifest.task_ids.len();
    if outcome.leaks > 0 {
        eprintln!("warning: {} requests failed the ground-truth audit", outcome.leaks);
    }
    let failed: Vec<&str> = outcome
        .results
        .iter()
        .filter_map(|r| r.error.as_deref())
        .collect();
    if !failed.is_empty() {
        eprintln!("warning: {} of {total} tasks recorded errors", failed.len());
    }
    if outcome.interrupted {
        return Err(CliError::Interrupted {
            done: outcome.results.len(),
            total,
        });
    }
    if total > 0 && failed.len() == total {
        return Err(CliError::Backend(format!("every task failed; first error: {}", failed[0])));
    }
    if let Some(r) = &outcome.report {
        println!("{}", summary_line(r, dir));
    }
    Ok(())
}

pub fn summary_line(r: &RunReport, dir: &Path) -> String {
    let arm = r
        .meta
        .arm
        .map(|(s, a)| format!(" [{s}/{a}]"))
        .unwrap_or_default();
    format!(
        "{} {}{arm} on {}: Pass@1 {}% ({}/{}), {} degraded, {} calls -> {}",
        r.meta.run_id,
        r.meta.mode,
        r.meta.dataset,
        eval::fmt_pct(r.pass_at_1),
        r.correct,
        r.total,
        r.degraded,
        r.calls,
        dir.display()
    )
}

fn cmd_run(flags: &RunFlags, record: bool) -> Result<(), CliError> {
    let settings = Settings::resolve(flags)?;
    let templates = load_templates(settings.templates.as_deref())?;
    let tasks = load_tasks(&settings)?;
    let base = base_pass_at_1(settings.base_report.as_deref())?;
    let backend = build_backend(&settings, record)?;
    let cfg = settings.pipeline.clone();
    let out_dir = settings
        .out_dir
        .clone()
        .unwrap_or_else(|| default_out_dir(&cfg, &settings, &tasks, &templates));
    execute_run(&tasks, backend.as_ref(), templates, cfg, &settings, out_dir, base)?;
    Ok(())
}

fn cmd_replay(args: &ReplayArgs) -> Result<(), CliError> {
    let dir = if args.manifest.is_dir() {
        args.manifest.clone()
    } else {
        args.manifest
            .parent()
            .map(Path::to_owned)
            .unwrap_or_default()
    };
    let manifest = runner::load_manifest(&dir)?;
    let mut tasks = runner::read_truth(&dir.join(TRUTH_FILE))?;
    tasks.retain(|t| manifest.task_ids.binary_search(&t.id).is_ok());
    if tasks.len() != manifest.task_ids.len() {
        return Err(CliError::Data(format!(
            "{} lists {} tasks but {} holds {}",
            MANIFEST_FILE,
            manifest.task_ids.len(),
            TRUTH_FILE,
            tasks.len()
        )));
    }
    let templates = load_templates(args.templates.as_deref())?;
    if templates.checksum() != manifest.template_checksum {
        return Err(CliError::Config(format!(
            "template checksum {} differs from the recorded {}",
            templates.checksum(),
            manifest.template_checksum
        )));
    }
    // carry the recorded Base column over so reports match the original
    let base = runner::read_report(&dir.join(format!("{REPORT_STEM}.json")))
        .ok()
        .and_then(|r| r.base_pass_at_1);
    let backend = ReplayBackend::open(&args.transcript)?;
    let settings = Settings {
        dataset: manifest.dataset.clone(),
        workers: args.workers,
        ..Settings::merge(&RunFlags::default(), FileConfig::default())?
    };
    let out_dir = args
        .out_dir
        .clone()
        .unwrap_or_else(|| dir.join("replay"));
    execute_run(&tasks, &backend, templates, manifest.config.clone(), &settings, out_dir, base)?;
    Ok(())
}

fn arm_dir(sum: Modality, app: Modality) -> String {
    format!("arm_{sum}_{app}")
}

fn cmd_ablate(args: &AblateArgs) -> Result<(), CliError> {
    if args.flags.mode.is_some_and(|m| m != Mode::Ablation)
        || args.flags.sum_modality.is_some()
        || args.flags.app_modality.is_some()
    {
        return Err(CliError::Usage(
            "ablate sweeps all arms; drop --mode, --sum-modality and --app-modality".into(),
        ));
    }
    let flags = RunFlags {
        mode: Some(Mode::Ablation),
        ..args.flags.clone()
    };
    let settings = Settings::resolve(&flags)?;
    let templates = load_templates(settings.templates.as_deref())?;
    let tasks = load_tasks(&settings)?;
    let backend = build_backend(&settings, false)?;
    let root = settings
        .out_dir
        .clone()
        .unwrap_or_else(|| default_out_dir(&settings.pipeline, &settings, &tasks, &templates));

    let mut baseline = base_pass_at_1(settings.base_report.as_deref())?.map(|p| (p, None));
    if args.with_baseline {
        let cfg = PipelineConfig {
            mode: Mode::Baseline,
            ..settings.pipeline.clone()
        };
        let out = execute_run(
            &tasks,
            backend.as_ref(),
            templates.clone(),
            cfg,
            &settings,
            root.join("baseline"),
            None,
        )?;
        baseline = out.report.map(|r| (r.pass_at_1, Some(r)));
    }

    let mut reports = Vec::new();
    for (sum, app) in ABLATION_ARMS {
        let cfg = PipelineConfig {
            sum_modality: sum,
            app_modality: app,
            ..settings.pipeline.clone()
        };
        let out = execute_run(
            &tasks,
            backend.as_ref(),
            templates.clone(),
            cfg,
            &settings,
            root.join(arm_dir(sum, app)),
            None,
        )?;
        reports.extend(out.report);
    }
    let base_report = baseline.map(|(pass, report)| {
        report.unwrap_or_else(|| placeholder_report(&settings.pipeline.model_id, pass))
    });
    let arms: Vec<&RunReport> = reports.iter().collect();
    let mut table = ablation_table(&arms, base_report.as_ref());
    table.push('\n');
    for r in &reports {
        if let Some((s, a)) = r.meta.arm {
            table.push_str(&format!("- {}: run {}\n", arm_dir(s, a), r.meta.run_id));
        }
    }
    let path = root.join(ABLATION_TABLE_FILE);
    fs::write(&path, &table).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    print!("{table}");
    Ok(())
}

/// Minimal report carrying only a Pass@1 figure, for table cells fed from
/// an external baseline value.
fn placeholder_report(model_id: &str, pass_at_1: f64) -> RunReport {
    RunReport {
        schema_version: eval::REPORT_SCHEMA_VERSION,
        meta: ReportMeta {
            run_id: String::new(),
            mode: Mode::Baseline,
            model_id: model_id.to_owned(),
            dataset: String::new(),
            n_max: 0,
            arm: None,
            config: serde_json::Value::Null,
        },
        total: 0,
        correct: 0,
        malformed: 0,
        degraded: 0,
        incorrect: 0,
        pass_at_1,
        pairs_total: 0,
        pairs_correct: 0,
        pair_accuracy: 0.0,
        per_round: None,
        round_semantics: None,
        base_pass_at_1: None,
        calls: 0,
        usage: Default::default(),
        tasks: Vec::new(),
    }
}

#[derive(Debug, Serialize)]
struct RenderManifest<'a> {
    task_ids: Vec<&'a str>,
    geometry: runner::Geometry,
    palette: &'a modal_arc::Palette,
    files: Vec<String>,
}

fn cmd_render(args: &RenderArgs) -> Result<(), CliError> {
    let defaults = RenderConfig::default();
    let cfg = RenderConfig {
        cell_px: args.cell_px.unwrap_or(defaults.cell_px),
        line_px: args.line_px.unwrap_or(defaults.line_px),
        border: args.border,
        ..defaults
    };
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let tasks = dataset::load_pool(&args.task)?;
    let out = &args.out_dir;
    let io = |p: &Path, e: std::io::Error| CliError::Data(format!("{}: {e}", p.display()));
    fs::create_dir_all(out).map_err(|e| io(out, e))?;
    let mut files = Vec::new();
    for task in &tasks {
        let mut grids = Vec::new();
        for (i, ex) in task.examples.iter().enumerate() {
            grids.push((ImageRole::ExampleInput, i, &ex.input));
            if let Some(o) = &ex.output {
                grids.push((ImageRole::ExampleOutput, i, o));
            }
        }
        for (i, t) in task.tests.iter().enumerate() {
            grids.push((ImageRole::TestInput, i, &t.input));
        }
        for (role, i, grid) in grids {
            let name = image_file_name(&task.id, role, i);
            let png = render_png(grid, &cfg).map_err(|e| CliError::Data(e.to_string()))?;
            let path = out.join(&name);
            fs::write(&path, png).map_err(|e| io(&path, e))?;
            files.push(name);
        }
    }
    let manifest = RenderManifest {
        task_ids: tasks.iter().map(|t| t.id.as_str()).collect(),
        geometry: runner::Geometry::from(&cfg),
        palette: &cfg.palette,
        files,
    };
    let path = out.join(RENDER_MANIFEST_FILE);
    let doc = serde_json::to_string_pretty(&manifest).expect("render manifest serializes");
    fs::write(&path, doc).map_err(|e| io(&path, e))?;
    println!("rendered {} images for {} tasks -> {}", manifest.files.len(), tasks.len(), out.display());
    Ok(())
}

fn cmd_score(args: &ScoreArgs) -> Result<(), CliError> {
    let dir = &args.run_dir;
    let mut report = match &args.truth {
        None => runner::score_dir(dir)?,
        Some(truth) => {
            let manifest = runner::load_manifest(dir)?;
            let results = runner::read_results(&dir.join(runner::RESULTS_FILE))?;
            let truths = dataset::load_pool(truth)?;
            eval::aggregate(&results, &truths, runner::report_meta(&manifest))
                .map_err(|e| CliError::Data(e.to_string()))?
        }
    };
    let previous = runner::read_report(&dir.join(format!("{REPORT_STEM}.json"))).ok();
    if report.meta.mode.is_self_correct() {
        report.base_pass_at_1 = previous.and_then(|r| r.base_pass_at_1);
    }
    runner::write_reports(dir, &report)?;
    println!("{}", summary_line(&report, dir));
    Ok(())
}

pub fn render_tables(
    reports: &[RunReport],
    table: TableKind,
    format: ReportFormat,
    base: Option<&RunReport>,
) -> Result<String, CliError> {
    let find = |mode: Mode| reports.iter().find(|r| r.meta.mode == mode);
    let base = base.or_else(|| find(Mode::Baseline));
    Ok(match table {
        TableKind::Single => {
            let mut out = String::new();
            for r in reports {
                out.push_str(
                    &modal_arc::emit(r, format).map_err(|e| CliError::Data(e.to_string()))?,
                );
            }
            out
        }
        TableKind::Comparison => comparison_table(&reports.iter().collect::<Vec<_>>()),
        TableKind::Ablation => {
            let arms: Vec<&RunReport> = reports.iter().filter(|r| r.meta.arm.is_some()).collect();
            if arms.is_empty() {
                return Err(CliError::Data("no ablation arm reports given".into()));
            }
            ablation_table(&arms, base)
        }
        TableKind::Selfcorrect => {
            let (tosc, mssc) = (find(Mode::VlsrTosc), find(Mode::VlsrMssc));
            if tosc.is_none() && mssc.is_none() {
                return Err(CliError::Data("no vlsr_tosc or vlsr_mssc report given".into()));
            }
            selfcorrect_table(tosc, mssc, base)
        }
    })
}

fn cmd_report(args: &ReportArgs) -> Result<(), CliError> {
    let reports = args
        .reports
        .iter()
        .map(|p| runner::read_report(&report_path(p)))
        .collect::<Result<Vec<_>, _>>()?;
    let base = args
        .base_report
        .as_deref()
        .map(|p| runner::read_report(&report_path(p)))
        .transpose()?;
    let doc = render_tables(&reports, args.table, args.format.into(), base.as_ref())?;
    match &args.output {
        Some(p) => fs::write(p, doc).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?,
        None => print!("{doc}"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_cli(["modal-arc"]), EXIT_USAGE);
        assert_eq!(run_cli(["modal-arc", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run_cli(["modal-arc", "run", "--mode", "bogus"]), EXIT_USAGE);
        assert_eq!(run_cli(["modal-arc", "--help"]), EXIT_OK);
    }

    #[test]
    fn missing_data_path_is_a_config_error() {
        let code = run_cli(["modal-arc", "run", "--backend", "scripted", "--script", "x.json"]);
        assert_eq!(code, EXIT_CONFIG);
    }

    #[test]
    fn error_codes() {
        assert_eq!(CliError::Usage(String::new()).exit_code(), 1);
        assert_eq!(CliError::Config(String::new()).exit_code(), 2);
        assert_eq!(CliError::Backend(String::new()).exit_code(), 3);
        assert_eq!(CliError::Data(String::new()).exit_code(), 4);
        let e: CliError = RunError::Invalid("x".into()).into();
        assert_eq!(e.exit_code(), EXIT_CONFIG);
        let e: CliError = BackendError::Auth("no key".into()).into();
        assert_eq!(e.exit_code(), EXIT_BACKEND);
    }

    #[test]
    fn arm_dirs_are_distinct() {
        let names: std::collections::BTreeSet<String> =
            ABLATION_ARMS.iter().map(|&(s, a)| arm_dir(s, a)).collect();
        assert_eq!(names.len(), 4);
        assert!(names.contains("arm_vision_text"));
    }
}
