//! Exact-match scoring, Pass@1 aggregation and report rendering.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::Usage;
use crate::grid::{grids_equal, Task};
use crate::pipeline::{Mode, TaskResult};
use crate::prompt::Modality;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// CSV columns, in order; `r1..rN` follow for self-correct runs.
pub const CSV_COLUMNS: [&str; 9] = [
    "task_id",
    "verdict",
    "correct",
    "malformed",
    "degraded",
    "pairs_correct",
    "pairs_total",
    "rounds_used",
    "calls",
];

pub const ROUND_SEMANTICS: &str = "Round r scores the prediction the pipeline would return if stopped \
after round r: the round-r prediction if that round ran, otherwise the last one produced.";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("task {task_id} has no ground-truth output for test {test_index}")]
    MissingGroundTruth { task_id: String, test_index: usize },
    #[error("result/truth mismatch: {0}")]
    CountMismatch(String),
    #[error("csv: {0}")]
    Csv(String),
}

/// Exactly one per task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskVerdict {
    Correct,
    /// Incorrect, with at least one test prediction absent.
    Malformed,
    /// Incorrect after falling back to the baseline.
    Degraded,
    Incorrect,
}

impl TaskVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskVerdict::Correct => "correct",
            TaskVerdict::Malformed => "malformed",
            TaskVerdict::Degraded => "degraded",
            TaskVerdict::Incorrect => "incorrect",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskScore {
    pub task_id: String,
    pub verdict: TaskVerdict,
    pub pairs_correct: usize,
    pub pairs_total: usize,
    pub malformed: bool,
    pub degraded: bool,
    /// Most rounds used by any test input.
    pub rounds_used: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rounds_correct: Vec<bool>,
    pub calls: usize,
}

impl TaskScore {
    pub fn is_correct(&self) -> bool {
        self.verdict == TaskVerdict::Correct
    }
}

/// Scores one task all-or-nothing over its test inputs.
pub fn score_task(result: &TaskResult, truth: &Task) -> Result<TaskScore, EvalError> {
    score_task_rounds(result, truth, 0)
}

/// As [`score_task`], also scoring the round-`1..=n_rounds` snapshots.
pub fn score_task_rounds(
    result: &TaskResult,
    truth: &Task,
    n_rounds: usize,
) -> Result<TaskScore, EvalError> {
    let outputs = truth
        .tests
        .iter()
        .enumerate()
        .map(|(i, p)| {
            p.output.as_ref().ok_or_else(|| EvalError::MissingGroundTruth {
                task_id: truth.id.clone(),
                test_index: i,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let attempt = |i: usize| result.attempts.iter().find(|a| a.test_index == i);
    let mut pairs_correct = 0;
    let mut malformed = false;
    for (i, want) in outputs.iter().enumerate() {
        match attempt(i).and_then(|a| a.final_prediction.as_ref()) {
            Some(got) if grids_equal(got, want) => pairs_correct += 1,
            Some(_) => {}
            None => malformed = true,
        }
    }
    let rounds_correct = (1..=n_rounds)
        .map(|r| {
            outputs.iter().enumerate().all(|(i, want)| {
                attempt(i)
                    .and_then(|a| a.prediction_at(r))
                    .is_some_and(|got| grids_equal(got, want))
            })
        })
        .collect();
    let verdict = if pairs_correct == outputs.len() {
        TaskVerdict::Correct
    } else if malformed {
        TaskVerdict::Malformed
    } else if result.degraded {
        TaskVerdict::Degraded
    } else {
        TaskVerdict::Incorrect
    };
    Ok(TaskScore {
        task_id: result.task_id.clone(),
        verdict,
        pairs_correct,
        pairs_total: outputs.len(),
        malformed,
        degraded: result.degraded,
        rounds_used: result.attempts.iter().map(|a| a.rounds.len()).max().unwrap_or(0),
        rounds_correct,
        calls: result.call_count(),
    })
}

/// Run-level facts echoed into a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub run_id: String,
    pub mode: Mode,
    pub model_id: String,
    pub dataset: String,
    pub n_max: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm: Option<(Modality, Modality)>,
    #[serde(default)]
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    #[serde(flatten)]
    pub meta: ReportMeta,
    pub total: usize,
    pub correct: usize,
    pub malformed: usize,
    pub degraded: usize,
    pub incorrect: usize,
    pub pass_at_1: f64,
    pub pairs_total: usize,
    pub pairs_correct: usize,
    pub pair_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_round: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round_semantics: Option<String>,
    /// Pass@1 of a reference baseline run, shown as the Base column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_pass_at_1: Option<f64>,
    pub calls: usize,
    pub usage: Usage,
    pub tasks: Vec<TaskScore>,
}

pub fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

pub fn fmt_pct(v: f64) -> String {
    format!("{v:.2}")
}

/// One result per truth task, matched by id; order does not matter.
pub fn aggregate(
    results: &[TaskResult],
    truths: &[Task],
    meta: ReportMeta,
) -> Result<RunReport, EvalError> {
    if results.len() != truths.len() {
        return Err(EvalError::CountMismatch(format!(
            "{} results for {} tasks",
            results.len(),
            truths.len()
        )));
    }
    let mut by_id: HashMap<&str, &Task> = HashMap::new();
    for t in truths {
        if by_id.insert(t.id.as_str(), t).is_some() {
            return Err(EvalError::CountMismatch(format!("duplicate task {}", t.id)));
        }
    }
    let n_rounds = if meta.mode.is_self_correct() { meta.n_max } else { 0 };
    let mut seen = BTreeSet::new();
    let mut tasks = Vec::with_capacity(results.len());
    let mut usage = Usage::default();
    for r in results {
        let truth = by_id
            .get(r.task_id.as_str())
            .ok_or_else(|| EvalError::CountMismatch(format!("result for unknown task {}", r.task_id)))?;
        if !seen.insert(r.task_id.as_str()) {
            return Err(EvalError::CountMismatch(format!("duplicate result for {}", r.task_id)));
        }
        tasks.push(score_task_rounds(r, truth, n_rounds)?);
        usage.add(&r.usage);
    }
    tasks.sort_by(|a, b| a.task_id.cmp(&b.task_id));

    let count = |v: TaskVerdict| tasks.iter().filter(|t| t.verdict == v).count();
    let total = tasks.len();
    let correct = count(TaskVerdict::Correct);
    let pairs_total = tasks.iter().map(|t| t.pairs_total).sum();
    let pairs_correct = tasks.iter().map(|t| t.pairs_correct).sum();
    let per_round = (n_rounds > 0).then(|| {
        (0..n_rounds)
            .map(|r| percent(tasks.iter().filter(|t| t.rounds_correct[r]).count(), total))
            .collect()
    });
    Ok(RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        total,
        correct,
        malformed: count(TaskVerdict::Malformed),
        degraded: count(TaskVerdict::Degraded),
        incorrect: count(TaskVerdict::Incorrect),
        pass_at_1: percent(correct, total),
        pairs_total,
        pairs_correct,
        pair_accuracy: percent(pairs_correct, pairs_total),
        round_semantics: per_round.as_ref().map(|_| ROUND_SEMANTICS.to_owned()),
        per_round,
        base_pass_at_1: None,
        calls: tasks.iter().map(|t| t.calls).sum(),
        usage,
        tasks,
        meta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
        }
    }
}

pub fn emit(report: &RunReport, format: ReportFormat) -> Result<String, EvalError> {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => emit_csv(report),
        ReportFormat::Markdown => Ok(emit_markdown(report)),
    }
}

fn emit_csv(report: &RunReport) -> Result<String, EvalError> {
    let csv_err = |e: csv::Error| EvalError::Csv(e.to_string());
    let n_rounds = report.per_round.as_ref().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = CSV_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((1..=n_rounds).map(|r| format!("r{r}")));
    w.write_record(&header).map_err(csv_err)?;
    for t in &report.tasks {
        let mut row = vec![
            t.task_id.clone(),
            t.verdict.as_str().to_owned(),
            t.is_correct().to_string(),
            t.malformed.to_string(),
            t.degraded.to_string(),
            t.pairs_correct.to_string(),
            t.pairs_total.to_string(),
            t.rounds_used.to_string(),
            t.calls.to_string(),
        ];
        row.extend(t.rounds_correct.iter().map(|c| c.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| EvalError::Csv(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn md_row(cells: &[String]) -> String {
    format!("| {} |\n", cells.join(" | "))
}

fn md_rule(n: usize) -> String {
    format!("|{}\n", "---|".repeat(n))
}

fn emit_markdown(r: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Run report `{}`\n", r.meta.run_id);
    let _ = writeln!(s, "- Mode: {}", r.meta.mode);
    if let Some((sum, app)) = r.meta.arm {
        let _ = writeln!(s, "- Arm: summarize with {sum}, apply with {app}");
    }
    let _ = writeln!(s, "- Model: {}", r.meta.model_id);
    let _ = writeln!(s, "- Dataset: {}", r.meta.dataset);
    let _ = writeln!(s, "- Tasks: {}", r.total);
    let _ = writeln!(s, "- Backend calls: {}", r.calls);
    let _ = writeln!(s, "- Report schema: v{}\n", r.schema_version);

    let header = ["Mode", "Tasks", "Correct", "Pass@1", "Pair acc.", "Malformed", "Degraded", "Incorrect"];
    s.push_str(&md_row(&header.map(String::from)));
    s.push_str(&md_rule(header.len()));
    s.push_str(&md_row(&[
        r.meta.mode.to_string(),
        r.total.to_string(),
        r.correct.to_string(),
        fmt_pct(r.pass_at_1),
        fmt_pct(r.pair_accuracy),
        r.malformed.to_string(),
        r.degraded.to_string(),
        r.incorrect.to_string(),
    ]));

    if let Some(rounds) = &r.per_round {
        s.push_str("\n## Accuracy by round\n\n");
        if let Some(sem) = &r.round_semantics {
            let _ = writeln!(s, "{sem}\n");
        }
        let mut head = vec!["Base".to_string()];
        head.extend((1..=rounds.len()).map(|i| format!("R{i}")));
        s.push_str(&md_row(&head));
        s.push_str(&md_rule(head.len()));
        let mut row = vec![r.base_pass_at_1.map_or("n/a".into(), fmt_pct)];
        row.extend(rounds.iter().map(|v| fmt_pct(*v)));
        s.push_str(&md_row(&row));
    }

    s.push_str("\n## Tasks\n\n");
    let head = ["Task", "Verdict", "Pairs", "Rounds", "Calls"];
    s.push_str(&md_row(&head.map(String::from)));
    s.push_str(&md_rule(head.len()));
    for t in &r.tasks {
        s.push_str(&md_row(&[
            format!("`{}`", t.task_id),
            t.verdict.as_str().into(),
            format!("{}/{}", t.pairs_correct, t.pairs_total),
            t.rounds_used.to_string(),
            t.calls.to_string(),
        ]));
    }
    s
}

fn mode_label(mode: Mode) -> &'static str {
    match mode {
        Mode::Baseline => "",
        Mode::Vlsr => "+VLSR",
        Mode::VlsrMssc => "+VLSR+MSSC",
        Mode::VlsrTosc => "+VLSR+TOSC",
        Mode::Ablation => "+ablation",
    }
}

/// Models-by-datasets comparison: one row per (model, mode), one Pass@1
/// column per dataset.
pub fn comparison_table(reports: &[&RunReport]) -> String {
    let datasets: BTreeSet<&str> = reports.iter().map(|r| r.meta.dataset.as_str()).collect();
    let mut rows: BTreeMap<(&str, Mode), BTreeMap<&str, f64>> = BTreeMap::new();
    for r in reports {
        rows.entry((r.meta.model_id.as_str(), r.meta.mode))
            .or_default()
            .insert(r.meta.dataset.as_str(), r.pass_at_1);
    }
    let mut head = vec!["Models".to_string()];
    head.extend(datasets.iter().map(|d| d.to_string()));
    let mut s = md_row(&head);
    s.push_str(&md_rule(head.len()));
    for ((model, mode), cells) in &rows {
        let label = match mode {
            Mode::Baseline => model.to_string(),
            m => format!("*{}* ({model})", mode_label(*m)),
        };
        let mut row = vec![label];
        row.extend(datasets.iter().map(|d| cells.get(d).map_or("n/a".into(), |v| fmt_pct(*v))));
        s.push_str(&md_row(&row));
    }
    s
}

/// Four-arm ablation grid in the Baseline | Rule-Sum. text | Rule-Sum. vision
/// | Rule-App. text | Rule-App. vision layout.
///
/// The Rule-Sum. columns vary summarization with text application; the
/// Rule-App. columns vary application with vision summarization, so the
/// (vision, text) arm fills both middle cells. The remaining
/// (text, vision) arm is listed under the table.
pub fn ablation_table(arms: &[&RunReport], baseline: Option<&RunReport>) -> String {
    let find = |sum: Modality, app: Modality| {
        arms.iter()
            .find(|r| r.meta.arm == Some((sum, app)))
            .map(|r| r.pass_at_1)
    };
    let cell = |v: Option<f64>| v.map_or("n/a".to_string(), fmt_pct);
    let model = arms
        .first()
        .map(|r| r.meta.model_id.clone())
        .unwrap_or_default();
    let mut s = String::new();
    s.push_str("| Models | Baseline | Rule-Sum. text | Rule-Sum. vision | Rule-App. text | Rule-App. vision |\n");
    s.push_str(&md_rule(6));
    s.push_str(&md_row(&[
        model,
        cell(baseline.map(|b| b.pass_at_1)),
        cell(find(Modality::Text, Modality::Text)),
        cell(find(Modality::Vision, Modality::Text)),
        cell(find(Modality::Vision, Modality::Text)),
        cell(find(Modality::Vision, Modality::Vision)),
    ]));
    let _ = writeln!(
        s,
        "\nSummarize with text, apply with vision: {}",
        cell(find(Modality::Text, Modality::Vision))
    );
    s
}

/// Base | TOSC R1..Rn | MSSC R1..Rn.
pub fn selfcorrect_table(
    tosc: Option<&RunReport>,
    mssc: Option<&RunReport>,
    base: Option<&RunReport>,
) -> String {
    let n = [tosc, mssc]
        .iter()
        .flatten()
        .filter_map(|r| r.per_round.as_ref().map(Vec::len))
        .max()
        .unwrap_or(3);
    let model = [tosc, mssc, base]
        .iter()
        .flatten()
        .next()
        .map(|r| r.meta.model_id.clone())
        .unwrap_or_default();
    let mut head = vec!["Models".to_string(), "Base".to_string()];
    for arm in ["TOSC", "MSSC"] {
        head.extend((1..=n).map(|i| format!("{arm} R{i}")));
    }
    let mut s = md_row(&head);
    s.push_str(&md_rule(head.len()));
    let base_cell = base
        .map(|b| b.pass_at_1)
        .or_else(|| [mssc, tosc].iter().flatten().find_map(|r| r.base_pass_at_1));
    let mut row = vec![model, base_cell.map_or("n/a".into(), fmt_pct)];
    for r in [tosc, mssc] {
        let rounds = r.and_then(|r| r.per_round.as_ref());
        row.extend((0..n).map(|i| {
            rounds
                .and_then(|v| v.get(i))
                .map_or("n/a".into(), |v| fmt_pct(*v))
        }));
    }
    s.push_str(&md_row(&row));
    let _ = writeln!(s, "\n{ROUND_SEMANTICS}");
    s
}
