//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any check fails.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use common::{cli, random_grid, random_tasks, s, write_dataset, write_script};
use modal_arc::backend::{network_attempts, set_network_forbidden};
use modal_arc::eval::{self, ReportMeta};
use modal_arc::extract::ParseQuality;
use modal_arc::grid::{MAX_DIM, MAX_VALUE};
use modal_arc::pipeline::{RoundRecord, TestAttempt};
use modal_arc::prompt::PromptArgs;
use modal_arc::render::decode_png;
use modal_arc::runner::{self, RunOptions, RESULTS_FILE};
use modal_arc::{
    audit_no_ground_truth, decode_image, encode_grid_text, parse_grid_text, render::render_png,
    DatasetSource, DatasetSpec, Feedback, Grid, Mode, PipelineConfig, Pipeline, PromptFamily,
    PromptKit, RenderConfig, RequestTag, RuleText, SampleSize, ScriptedBackend, Stage, Task,
    TaskResult, TemplateSet,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CODEC_GRIDS: usize = 1000;
const CODEC_BUDGET: Duration = Duration::from_secs(30);
const PALETTE_GRIDS: usize = 100;
const CALL_TRACES: usize = 50;
const AUDIT_TASKS: usize = 100;
const SCORING_PAIRS: usize = 1000;
const REPLAY_TASKS: usize = 20;
const LIVE_TASKS: usize = 5;
const LIVE_MIN_PARSED: usize = 3;

/// Declared ARC palette, value order 0..=9.
const PALETTE: [[u8; 3]; 10] = [
    [0, 0, 0],
    [0, 116, 217],
    [255, 65, 54],
    [46, 204, 64],
    [255, 220, 0],
    [170, 170, 170],
    [240, 18, 190],
    [255, 133, 27],
    [127, 219, 255],
    [135, 77, 42],
];

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn codec_round_trips() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let cfg = RenderConfig::default();
    let mut dims = BTreeSet::new();
    let mut values = BTreeSet::new();
    let start = Instant::now();
    for i in 0..CODEC_GRIDS {
        let rows = 1 + i % MAX_DIM;
        let cols = 1 + (i / MAX_DIM) % MAX_DIM;
        let cells: Vec<u8> = (0..rows * cols).map(|_| rng.random_range(0..=MAX_VALUE)).collect();
        values.extend(cells.iter().copied());
        dims.insert(rows);
        dims.insert(cols);
        let g = Grid::new(rows, cols, cells).unwrap();
        let text = encode_grid_text(&g);
        ensure(parse_grid_text(&text).as_ref() == Ok(&g), || format!("text round trip failed for grid {i}"))?;
        let png = render_png(&g, &cfg).map_err(|e| e.to_string())?;
        let img = decode_png(&png).map_err(|e| e.to_string())?;
        ensure(decode_image(&img, &cfg).as_ref() == Ok(&g), || format!("image round trip failed for grid {i}"))?;
    }
    let elapsed = start.elapsed();
    ensure(dims.len() == MAX_DIM, || format!("only {} dims covered", dims.len()))?;
    ensure(values.len() == 10, || format!("only {} values covered", values.len()))?;
    ensure(elapsed < CODEC_BUDGET, || format!("took {elapsed:?}, budget {CODEC_BUDGET:?}"))?;
    Ok(format!("{CODEC_GRIDS} grids, dims 1..={MAX_DIM}, values 0..=9, {:.1}s", elapsed.as_secs_f64()))
}

fn palette_bit_exactness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let cfg = RenderConfig::default();
    let (cell, line) = (cfg.cell_px, cfg.line_px);
    let mut checked = 0usize;
    for i in 0..PALETTE_GRIDS {
        let g = random_grid(&mut rng, MAX_DIM);
        let img = decode_png(&render_png(&g, &cfg).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        for r in 0..g.rows() {
            for c in 0..g.cols() {
                let x = c as u32 * (cell + line) + cell / 2;
                let y = r as u32 * (cell + line) + cell / 2;
                let want = PALETTE[g.get(r, c).unwrap() as usize];
                let got = img.get_pixel(x, y).0;
                ensure(got == want, || format!("grid {i} cell ({r},{c}): {got:?} != {want:?}"))?;
                checked += 1;
            }
        }
    }
    Ok(format!("{PALETTE_GRIDS} grids, {checked} cell centres"))
}

/// Scripted replies: verdict for round r is True iff r >= `accept`.
fn scripted(accept: Option<usize>) -> ScriptedBackend {
    ScriptedBackend::from_fn(move |req| {
        let tag = RequestTag::parse(&req.request_tag).unwrap();
        Ok(match tag.stage {
            Stage::Summarize => "\\boxed{Recolor every cell.}".into(),
            Stage::Baseline | Stage::Apply => "\\boxed{[[1, 2], [3, 4]]}".into(),
            Stage::Verify => match accept {
                Some(a) if tag.round.unwrap() >= a => "\\boxed{True}".into(),
                _ => "\\boxed{False}".into(),
            },
        })
    })
}

fn call_count_laws() -> Check {
    let count = |mode: Mode, n_max: usize, accept: Option<usize>, task: &Task| {
        let mut cfg = PipelineConfig::for_mode(mode);
        cfg.n_max = n_max;
        let b = scripted(accept);
        Pipeline::new(TemplateSet::builtin(), cfg).unwrap().run(&task.redacted(), &b);
        b.call_count()
    };
    let task = &random_tasks(7, 1, 3)[0];
    ensure(count(Mode::Baseline, 3, None, task) == 1, || "baseline != 1 call".into())?;
    ensure(count(Mode::Vlsr, 3, None, task) == 2, || "vlsr != 2 calls".into())?;
    ensure(count(Mode::VlsrMssc, 3, None, task) == 1 + 3 + 3, || "[F,F,F] != 1+3+3".into())?;
    ensure(count(Mode::VlsrMssc, 3, Some(2), task) == 1 + 2 + 2, || "[F,T] != 1+2+2".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for trace in 0..CALL_TRACES {
        let task = &random_tasks(trace as u64, 1, rng.random_range(1..=4))[0];
        let n_max = rng.random_range(1..=4);
        let accept = match rng.random_range(0..=n_max + 1) {
            0 => None,
            r => Some(r),
        };
        let rounds = accept.map_or(n_max, |a| a.min(n_max));
        for (mode, want) in [
            (Mode::Baseline, 1),
            (Mode::Vlsr, 2),
            (Mode::VlsrMssc, 1 + 2 * rounds),
            (Mode::VlsrTosc, 1 + 2 * rounds),
        ] {
            let got = count(mode, n_max, accept, task);
            ensure(got == want, || format!("trace {trace} {mode}: {got} calls, want {want}"))?;
        }
    }
    Ok(format!("fixed cases plus {CALL_TRACES} traces x 4 modes"))
}

fn prompt_fidelity() -> Check {
    let task = &random_tasks(3, 1, 3)[0];
    let view = task.redacted();
    let kit = PromptKit::new(TemplateSet::builtin(), RenderConfig::default()).unwrap();
    let rule = RuleText::new("Recolor every cell.").unwrap();
    let pred = Grid::filled(2, 2, 1).unwrap();
    let fb = Feedback {
        previous_prediction: Some(pred.clone()),
        critic_rationale: "wrong colour".into(),
        round_index: 0,
    };
    let anchors: &[(PromptFamily, &[&str])] = &[
        (PromptFamily::TextBaseline, &["Put the output matrix within"]),
        (PromptFamily::RuleSummarizationVision, &["Output the rule you learned within"]),
        (PromptFamily::RuleSummarizationText, &["Output the rule you learned within"]),
        (PromptFamily::RuleApplicationText, &["check the correctness of the rule", "Put the output matrix within"]),
        (PromptFamily::RuleApplicationVision, &["check the correctness of the rule", "Put the output matrix within"]),
        (PromptFamily::RefinementText, &["check the correctness of the rule", "Put the output matrix within"]),
        (PromptFamily::VerificationVision, &["\\boxed{True} or \\boxed{False}"]),
        (PromptFamily::VerificationText, &["\\boxed{True} or \\boxed{False}"]),
    ];
    ensure(anchors.len() == PromptFamily::ALL.len(), || "family list out of date".into())?;
    for (family, phrases) in anchors {
        let args = PromptArgs {
            test_index: 0,
            rule: Some(&rule),
            prediction: Some(&pred),
            feedback: (*family == PromptFamily::RefinementText).then_some(&fb),
        };
        let seq = kit.build(*family, &view, &args).map_err(|e| e.to_string())?;
        let text = seq.text();
        for phrase in *phrases {
            ensure(text.contains(phrase), || format!("{family} lacks {phrase:?}"))?;
        }
        if *family == PromptFamily::VerificationVision {
            let n = seq.image_count();
            ensure(n == 8, || format!("K=3 verification carries {n} images, want 8"))?;
        }
    }
    Ok(format!("{} families anchored; K=3 verification has 8 images", anchors.len()))
}

fn leak_audit() -> Check {
    let tasks = random_tasks(12, AUDIT_TASKS, 3);
    let dir = tempfile::tempdir().unwrap();
    let mut audited = 0;
    for mode in [Mode::VlsrMssc, Mode::VlsrTosc, Mode::Baseline] {
        let backend = scripted(None);
        let out = runner::run(
            &tasks,
            &backend,
            TemplateSet::builtin(),
            PipelineConfig::for_mode(mode),
            DatasetSpec {
                source: DatasetSource::ArcEval,
                sample_size: SampleSize::All,
                seed: 0,
            },
            &RunOptions::new(dir.path().join(mode.as_str())),
        )
        .map_err(|e| e.to_string())?;
        ensure(out.leaks == 0, || format!("{mode}: runner flagged {} leaks", out.leaks))?;
        let cfg = RenderConfig::default();
        for req in backend.requests() {
            let tag = RequestTag::parse(&req.request_tag).unwrap();
            let task = tasks.iter().find(|t| t.id == tag.task_id).unwrap();
            ensure(audit_no_ground_truth(&req.messages, task, &cfg), || format!("leak in {}", req.request_tag))?;
            audited += 1;
        }
    }
    Ok(format!("{AUDIT_TASKS} tasks x 3 modes, {audited} requests clean"))
}

fn same_grid(a: &Grid, b: &Grid) -> bool {
    a.rows() == b.rows() && a.cols() == b.cols() && a.cells() == b.cells()
}

fn scoring_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut results = Vec::new();
    let mut truths = Vec::new();
    for i in 0..SCORING_PAIRS {
        let n_tests = rng.random_range(1..=2);
        let tests: Vec<_> = (0..n_tests)
            .map(|_| modal_arc::Pair::new(random_grid(&mut rng, 3), random_grid(&mut rng, 3)))
            .collect();
        let ex = modal_arc::Pair::new(random_grid(&mut rng, 3), random_grid(&mut rng, 3));
        let task = Task::new(format!("s{i:04}"), vec![ex], tests).unwrap();
        let mut r = TaskResult::new(&task.id, Mode::Vlsr);
        for (j, p) in task.tests.iter().enumerate() {
            let pred = match rng.random_range(0..4) {
                0 => None,
                1 => Some(random_grid(&mut rng, 3)),
                _ => p.output.clone(),
            };
            r.attempts.push(TestAttempt {
                test_index: j,
                rounds: vec![RoundRecord {
                    prediction: pred.clone(),
                    verdict: None,
                    rationale: None,
                    error: None,
                }],
                final_prediction: pred,
            });
        }
        results.push(r);
        truths.push(task);
    }
    let brute = results
        .iter()
        .zip(&truths)
        .filter(|(r, t)| {
            t.tests.iter().enumerate().all(|(j, p)| {
                r.attempts[j]
                    .final_prediction
                    .as_ref()
                    .is_some_and(|g| same_grid(g, p.output.as_ref().unwrap()))
            })
        })
        .count();
    let meta = |mode| ReportMeta {
        run_id: "oracle".into(),
        mode,
        model_id: "m".into(),
        dataset: "d".into(),
        n_max: 3,
        arm: None,
        config: serde_json::Value::Null,
    };
    let report = eval::aggregate(&results, &truths, meta(Mode::Vlsr)).map_err(|e| e.to_string())?;
    let want = 100.0 * brute as f64 / SCORING_PAIRS as f64;
    ensure(report.correct == brute, || format!("{} correct, brute force {brute}", report.correct))?;
    ensure(report.pass_at_1 == want, || format!("Pass@1 {} != {want}", report.pass_at_1))?;

    let hand: Vec<Task> = truths[..8].to_vec();
    let hand_results: Vec<TaskResult> = hand
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut r = TaskResult::new(&t.id, Mode::Vlsr);
            for (j, p) in t.tests.iter().enumerate() {
                let pred = if i < 3 { p.output.clone() } else { None };
                r.attempts.push(TestAttempt {
                    test_index: j,
                    rounds: Vec::new(),
                    final_prediction: pred,
                });
            }
            r
        })
        .collect();
    let hand_report = eval::aggregate(&hand_results, &hand, meta(Mode::Vlsr)).map_err(|e| e.to_string())?;
    let shown = eval::fmt_pct(hand_report.pass_at_1);
    ensure(shown == "37.50", || format!("3/8 rendered as {shown}"))?;
    Ok(format!("{SCORING_PAIRS} pairs, {brute} correct both ways; 3/8 -> {shown}"))
}

const REPORT_FILES: [&str; 4] = [RESULTS_FILE, "report.json", "report.csv", "report.md"];

fn files_identical(a: &Path, b: &Path) -> Result<(), String> {
    for f in REPORT_FILES {
        let (x, y) = (fs::read(a.join(f)), fs::read(b.join(f)));
        match (x, y) {
            (Ok(x), Ok(y)) if x == y => {}
            (Ok(_), Ok(_)) => return Err(format!("{f} differs between {} and {}", a.display(), b.display())),
            _ => return Err(format!("{f} missing in {} or {}", a.display(), b.display())),
        }
    }
    Ok(())
}

fn replay_determinism() -> Check {
    let root = tempfile::tempdir().unwrap();
    let data = write_dataset(root.path(), &random_tasks(20, REPLAY_TASKS, 3));
    let script = write_script(root.path(), &[false, true]);
    let transcript = root.path().join("transcript");
    let rec = root.path().join("recorded");
    let common = ["--mode", "vlsr_mssc", "--dataset", "arc-eval", "--data-path", s(&data)];
    let mut args = common.to_vec();
    args.extend(["--backend", "scripted", "--script", s(&script), "--transcript", s(&transcript), "--out-dir", s(&rec)]);
    let code = cli(&[&["record"], args.as_slice()].concat());
    ensure(code == 0, || format!("record exited {code}"))?;

    set_network_forbidden(true);
    let before = network_attempts();
    let mut outs = Vec::new();
    for i in 0..2 {
        let out = root.path().join(format!("replay{i}"));
        let code = cli(&["replay", "--manifest", s(&rec), "--transcript", s(&transcript), "--out-dir", s(&out)]);
        ensure(code == 0, || format!("replay {i} exited {code}"))?;
        outs.push(out);
    }
    for i in 0..2 {
        let out = root.path().join(format!("run_replay{i}"));
        let mut args = vec!["run"];
        args.extend(common);
        args.extend(["--backend", "replay", "--transcript", s(&transcript), "--out-dir", s(&out)]);
        let code = cli(&args);
        ensure(code == 0, || format!("run --backend replay {i} exited {code}"))?;
        outs.push(out);
    }
    set_network_forbidden(false);
    let used = network_attempts() - before;
    ensure(used == 0, || format!("{used} network attempts during replay"))?;
    for out in &outs {
        files_identical(&rec, out)?;
    }
    let results = runner::read_results(&rec.join(RESULTS_FILE)).map_err(|e| e.to_string())?;
    ensure(results.len() == REPLAY_TASKS, || format!("{} results", results.len()))?;
    ensure(results.iter().all(|r| r.call_count() == 5), || "recorded run is not 1+2+2 per task".into())?;
    Ok(format!("{REPLAY_TASKS} tasks, 4 replays byte-identical to the recording, 0 network attempts"))
}

const TABLE1_HEADER: &str =
    "| Models | Baseline | Rule-Sum. text | Rule-Sum. vision | Rule-App. text | Rule-App. vision |";
const TABLE4_HEADER: &str =
    "| Models | Base | TOSC R1 | TOSC R2 | TOSC R3 | MSSC R1 | MSSC R2 | MSSC R3 |";

fn cells(line: &str) -> Vec<String> {
    line.trim()
        .trim_matches('|')
        .split('|')
        .map(|c| c.trim().to_owned())
        .collect()
}

fn table_shapes() -> Check {
    let root = tempfile::tempdir().unwrap();
    let data = write_dataset(root.path(), &random_tasks(30, 6, 3));
    let script = write_script(root.path(), &[false, false, true]);
    let base = ["--data-path", s(&data), "--backend", "scripted", "--script", s(&script), "--seed", "7"];

    let abl = root.path().join("ablate");
    let mut args = vec!["ablate", "--with-baseline", "--out-dir", s(&abl)];
    args.extend(base);
    let code = cli(&args);
    ensure(code == 0, || format!("ablate exited {code}"))?;
    for arm in ["arm_text_text", "arm_vision_text", "arm_text_vision", "arm_vision_vision"] {
        ensure(abl.join(arm).join(RESULTS_FILE).is_file(), || format!("{arm} has no results"))?;
    }
    let table = fs::read_to_string(abl.join(modal_arc_cli::ABLATION_TABLE_FILE)).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = table.lines().collect();
    ensure(lines.first() == Some(&TABLE1_HEADER), || format!("ablation header {:?}", lines.first()))?;
    let row = cells(lines.get(2).copied().unwrap_or_default());
    ensure(row.len() == 6 && row.iter().all(|c| c != "n/a"), || format!("ablation row {row:?}"))?;

    let mut reports = Vec::new();
    for mode in ["baseline", "vlsr_tosc", "vlsr_mssc"] {
        let out = root.path().join(mode);
        let mut args = vec!["run", "--mode", mode, "--out-dir", s(&out)];
        args.extend(base);
        let code = cli(&args);
        ensure(code == 0, || format!("run {mode} exited {code}"))?;
        reports.push(out);
    }
    let table_path = root.path().join("table4.md");
    let code = cli(&[
        "report", "--table", "selfcorrect", "--output", s(&table_path),
        s(&reports[0]), s(&reports[1]), s(&reports[2]),
    ]);
    ensure(code == 0, || format!("report exited {code}"))?;
    let table = fs::read_to_string(&table_path).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = table.lines().collect();
    ensure(lines.first() == Some(&TABLE4_HEADER), || format!("self-correct header {:?}", lines.first()))?;
    let row = cells(lines.get(2).copied().unwrap_or_default());
    ensure(row.len() == 8 && row.iter().all(|c| c != "n/a"), || format!("self-correct row {row:?}"))?;

    let md = fs::read_to_string(reports[2].join("report.md")).map_err(|e| e.to_string())?;
    ensure(md.contains("| Base | R1 | R2 | R3 |"), || "mssc report lacks Base/R1..R3".into())?;
    Ok("four-arm ablation table and Base/R1..R3 self-correct table".into())
}

/// Runs only when MODAL_ARC_LIVE_ENDPOINT and MODAL_ARC_LIVE_DATA are set.
fn live_smoke() -> Option<Check> {
    let endpoint = std::env::var("MODAL_ARC_LIVE_ENDPOINT").ok()?;
    let data = std::env::var("MODAL_ARC_LIVE_DATA").ok()?;
    Some((|| {
        let out = tempfile::tempdir().unwrap();
        let n = LIVE_TASKS.to_string();
        let mut args = vec![
            "run", "--mode", "vlsr_mssc", "--backend", "remote", "--endpoint", &endpoint,
            "--data-path", &data, "--sample-size", &n, "--out-dir", s(out.path()),
        ];
        let model = std::env::var("MODAL_ARC_LIVE_MODEL").unwrap_or_default();
        if !model.is_empty() {
            args.extend(["--model", &model]);
        }
        let code = cli(&args);
        ensure(code == 0, || format!("live run exited {code}"))?;
        runner::load_manifest(out.path()).map_err(|e| e.to_string())?;
        runner::read_report(&out.path().join("report.json")).map_err(|e| e.to_string())?;
        let results = runner::read_results(&out.path().join(RESULTS_FILE)).map_err(|e| e.to_string())?;
        let rounds = |r: &TaskResult| r.attempts.iter().flat_map(|a| a.rounds.iter()).cloned().collect::<Vec<_>>();
        let summarized = results.iter().filter(|r| r.rule.is_some()).count();
        let applied = results.iter().filter(|r| rounds(r).iter().any(|x| x.prediction.is_some())).count();
        let verified = results
            .iter()
            .filter(|r| {
                rounds(r)
                    .iter()
                    .any(|x| x.verdict.as_ref().is_some_and(|v| v.parse_quality == ParseQuality::Explicit))
            })
            .count();
        for (stage, k) in [("summarize", summarized), ("apply", applied), ("verify", verified)] {
            ensure(k >= LIVE_MIN_PARSED, || format!("{stage} parsed on {k}/{LIVE_TASKS} tasks"))?;
        }
        Ok(format!("parsed summarize {summarized}, apply {applied}, verify {verified} of {LIVE_TASKS}"))
    })())
}

fn main() {
    let checks: [Criterion; 8] = [
        ("codec round-trips", codec_round_trips),
        ("palette bit-exactness", palette_bit_exactness),
        ("call-count laws", call_count_laws),
        ("prompt fidelity", prompt_fidelity),
        ("ground-truth leak audit", leak_audit),
        ("scoring oracle equivalence", scoring_oracle),
        ("replay determinism", replay_determinism),
        ("table-shape reproduction", table_shapes),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    match live_smoke() {
        Some(Ok(detail)) => println!("PASS live smoke: {detail}"),
        Some(Err(detail)) => {
            failed += 1;
            println!("FAIL live smoke: {detail}");
        }
        None => println!("SKIP live smoke: MODAL_ARC_LIVE_ENDPOINT or MODAL_ARC_LIVE_DATA unset"),
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
