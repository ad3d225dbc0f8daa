mod common;

use std::fs;

use common::{cli, random_tasks, s, write_dataset, write_script};
use modal_arc::runner::{self, MANIFEST_FILE, PARTIAL_RESULTS_FILE, RESULTS_FILE};
use modal_arc_cli::{EXIT_BACKEND, EXIT_CONFIG, EXIT_DATA, EXIT_OK, EXIT_USAGE, RENDER_MANIFEST_FILE};

#[test]
fn render_writes_two_k_plus_one_pngs() {
    let root = tempfile::tempdir().unwrap();
    for k in [1, 3, 4] {
        let data = write_dataset(&root.path().join(format!("k{k}")), &random_tasks(k as u64, 1, k));
        let file = data.join("task000.json");
        let out = root.path().join(format!("png{k}"));
        assert_eq!(cli(&["render", "--task", s(&file), "--out-dir", s(&out)]), EXIT_OK);
        let pngs = fs::read_dir(&out)
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
            .count();
        assert_eq!(pngs, 2 * k + 1);
        assert!(out.join(RENDER_MANIFEST_FILE).is_file());
        assert!(out.join("task000_test_in_0.png").is_file());
    }
}

#[test]
fn render_rejects_bad_geometry() {
    let root = tempfile::tempdir().unwrap();
    let data = write_dataset(root.path(), &random_tasks(1, 1, 2));
    let out = root.path().join("out");
    assert_eq!(
        cli(&["render", "--task", s(&data), "--out-dir", s(&out), "--cell-px", "2"]),
        EXIT_CONFIG
    );
}

#[test]
fn exit_codes_by_failure_class() {
    let root = tempfile::tempdir().unwrap();
    let data = write_dataset(root.path(), &random_tasks(2, 2, 2));
    let script = write_script(root.path(), &[true]);
    let out = root.path().join("out");

    assert_eq!(cli(&["run", "--n-max"]), EXIT_USAGE);

    let bad = root.path().join("bad.toml");
    fs::write(&bad, "n_maxx = 3\n").unwrap();
    assert_eq!(cli(&["run", "--config", s(&bad), "--data-path", s(&data)]), EXIT_CONFIG);

    let missing = root.path().join("nowhere");
    assert_eq!(
        cli(&["run", "--backend", "scripted", "--script", s(&script), "--data-path", s(&missing), "--out-dir", s(&out)]),
        EXIT_DATA
    );
    assert_eq!(
        cli(&["run", "--backend", "scripted", "--script", s(&script), "--data-path", s(&data), "--sample-size", "50", "--out-dir", s(&out)]),
        EXIT_DATA
    );

    let cfg = root.path().join("remote.toml");
    fs::write(&cfg, "[remote]\napi_key_env = \"MODAL_ARC_TEST_KEY_THAT_IS_NEVER_SET\"\n").unwrap();
    assert_eq!(
        cli(&["run", "--config", s(&cfg), "--backend", "remote", "--data-path", s(&data), "--out-dir", s(&out)]),
        EXIT_BACKEND
    );

    let empty = root.path().join("empty-transcript");
    fs::create_dir_all(&empty).unwrap();
    assert_eq!(
        cli(&["run", "--backend", "replay", "--transcript", s(&empty), "--data-path", s(&data), "--out-dir", s(&out)]),
        EXIT_BACKEND,
        "every request misses an empty transcript"
    );
}

#[test]
fn config_file_is_merged_under_flags() {
    let root = tempfile::tempdir().unwrap();
    let data = write_dataset(root.path(), &random_tasks(3, 4, 2));
    let script = write_script(root.path(), &[false]);
    let cfg = root.path().join("run.json");
    fs::write(
        &cfg,
        serde_json::json!({
            "mode": "vlsr_mssc",
            "n_max": 2,
            "backend": "scripted",
            "script": script,
            "data_path": data,
        })
        .to_string(),
    )
    .unwrap();
    let out = root.path().join("out");
    assert_eq!(cli(&["run", "--config", s(&cfg), "--n-max", "1", "--out-dir", s(&out)]), EXIT_OK);
    let manifest = runner::load_manifest(&out).unwrap();
    assert_eq!(manifest.config.n_max, 1);
    let results = runner::read_results(&out.join(RESULTS_FILE)).unwrap();
    assert!(results.iter().all(|r| r.call_count() == 3));
}

#[test]
fn rerun_in_a_used_directory_with_other_settings_is_refused() {
    let root = tempfile::tempdir().unwrap();
    let data = write_dataset(root.path(), &random_tasks(4, 3, 2));
    let script = write_script(root.path(), &[true]);
    let out = root.path().join("out");
    let base = ["--backend", "scripted", "--script", s(&script), "--data-path", s(&data), "--out-dir", s(&out)];
    assert_eq!(cli(&[&["run", "--mode", "vlsr"], &base[..]].concat()), EXIT_OK);
    assert_eq!(cli(&[&["run", "--mode", "baseline"], &base[..]].concat()), EXIT_CONFIG);
}

#[test]
fn interrupted_run_resumes_to_identical_output() {
    let root = tempfile::tempdir().unwrap();
    let data = write_dataset(root.path(), &random_tasks(5, 6, 2));
    let script = write_script(root.path(), &[false, true]);
    let run = |out: &std::path::Path| {
        cli(&[
            "run", "--mode", "vlsr_mssc", "--backend", "scripted", "--script", s(&script),
            "--data-path", s(&data), "--out-dir", s(out), "--workers", "2",
        ])
    };
    let full = root.path().join("full");
    assert_eq!(run(&full), EXIT_OK);

    // simulate a crash after two tasks, with a torn third line
    let part = root.path().join("part");
    fs::create_dir_all(&part).unwrap();
    fs::copy(full.join(MANIFEST_FILE), part.join(MANIFEST_FILE)).unwrap();
    let lines: Vec<String> = fs::read_to_string(full.join(RESULTS_FILE))
        .unwrap()
        .lines()
        .map(str::to_owned)
        .collect();
    let torn = format!("{}\n{}\n{}", lines[0], lines[1], &lines[2][..lines[2].len() / 2]);
    fs::write(part.join(PARTIAL_RESULTS_FILE), torn).unwrap();

    assert_eq!(run(&part), EXIT_OK);
    for f in [RESULTS_FILE, "report.json", "report.csv", "report.md", MANIFEST_FILE] {
        assert_eq!(fs::read(full.join(f)).unwrap(), fs::read(part.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn score_and_report_work_offline() {
    let root = tempfile::tempdir().unwrap();
    let tasks = random_tasks(6, 4, 2);
    let data = write_dataset(root.path(), &tasks);
    let script = write_script(root.path(), &[true]);
    let out = root.path().join("out");
    assert_eq!(
        cli(&["run", "--mode", "vlsr_tosc", "--backend", "scripted", "--script", s(&script), "--data-path", s(&data), "--out-dir", s(&out)]),
        EXIT_OK
    );
    let before = fs::read(out.join("report.json")).unwrap();
    assert_eq!(cli(&["score", s(&out)]), EXIT_OK);
    assert_eq!(fs::read(out.join("report.json")).unwrap(), before);
    assert_eq!(cli(&["score", s(&out), "--truth", s(&data)]), EXIT_OK);
    assert_eq!(fs::read(out.join("report.json")).unwrap(), before);

    let csv = root.path().join("r.csv");
    assert_eq!(cli(&["report", s(&out), "--format", "csv", "--output", s(&csv)]), EXIT_OK);
    let header = fs::read_to_string(&csv).unwrap().lines().next().unwrap().to_owned();
    assert!(header.starts_with("task_id,verdict,correct,malformed,degraded,pairs_correct,pairs_total,rounds_used,calls,r1"));

    let cmp = root.path().join("cmp.md");
    assert_eq!(cli(&["report", s(&out), "--table", "comparison", "--output", s(&cmp)]), EXIT_OK);
    assert!(fs::read_to_string(&cmp).unwrap().starts_with("| Models | arc-eval |"));

    assert_eq!(cli(&["report", s(&out), "--table", "ablation"]), EXIT_DATA);
    assert_eq!(cli(&["report", s(&root.path().join("missing"))]), EXIT_DATA);
}

#[test]
fn every_report_references_its_manifest() {
    let root = tempfile::tempdir().unwrap();
    let data = write_dataset(root.path(), &random_tasks(8, 3, 3));
    let script = write_script(root.path(), &[true]);
    let out = root.path().join("abl");
    assert_eq!(
        cli(&["ablate", "--backend", "scripted", "--script", s(&script), "--data-path", s(&data), "--out-dir", s(&out)]),
        EXIT_OK
    );
    for arm in ["arm_text_text", "arm_vision_text", "arm_text_vision", "arm_vision_vision"] {
        let dir = out.join(arm);
        let manifest = runner::load_manifest(&dir).unwrap();
        let report = runner::read_report(&dir.join("report.json")).unwrap();
        assert_eq!(report.meta.run_id, manifest.run_id);
        assert!(report.meta.arm.is_some());
    }
    assert_eq!(
        cli(&["ablate", "--mode", "vlsr", "--data-path", s(&data)]),
        EXIT_USAGE
    );
}

#[test]
fn record_requires_a_transcript() {
    let root = tempfile::tempdir().unwrap();
    let data = write_dataset(root.path(), &random_tasks(9, 1, 2));
    let script = write_script(root.path(), &[true]);
    assert_eq!(
        cli(&["record", "--backend", "scripted", "--script", s(&script), "--data-path", s(&data)]),
        EXIT_CONFIG
    );
}
