#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use modal_arc::{Grid, Pair, Task};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub fn random_grid(rng: &mut ChaCha8Rng, max_dim: usize) -> Grid {
    let rows = rng.random_range(1..=max_dim);
    let cols = rng.random_range(1..=max_dim);
    let cells = (0..rows * cols).map(|_| rng.random_range(0..=9)).collect();
    Grid::new(rows, cols, cells).unwrap()
}

/// `n` tasks with `k` examples and one test each, ids `task000`..
pub fn random_tasks(seed: u64, n: usize, k: usize) -> Vec<Task> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let examples = (0..k)
                .map(|_| Pair::new(random_grid(&mut rng, 5), random_grid(&mut rng, 5)))
                .collect();
            let test = Pair::new(random_grid(&mut rng, 5), random_grid(&mut rng, 5));
            Task::new(format!("task{i:03}"), examples, vec![test]).unwrap()
        })
        .collect()
}

fn grid_json(g: &Grid) -> Value {
    json!(g.iter_rows().map(|r| r.to_vec()).collect::<Vec<_>>())
}

fn pair_json(p: &Pair) -> Value {
    json!({
        "input": grid_json(&p.input),
        "output": grid_json(p.output.as_ref().unwrap()),
    })
}

/// Writes tasks as ARC JSON files, one per task, and returns the directory.
pub fn write_dataset(root: &Path, tasks: &[Task]) -> PathBuf {
    let dir = root.join("data");
    fs::create_dir_all(&dir).unwrap();
    for t in tasks {
        let doc = json!({
            "train": t.examples.iter().map(pair_json).collect::<Vec<_>>(),
            "test": t.tests.iter().map(pair_json).collect::<Vec<_>>(),
        });
        fs::write(dir.join(format!("{}.json", t.id)), doc.to_string()).unwrap();
    }
    dir
}

/// Scripted replies: a fixed rule and prediction; verdicts per round.
pub fn write_script(root: &Path, verdicts: &[bool]) -> PathBuf {
    let verify: Vec<String> = verdicts
        .iter()
        .map(|&v| format!("\\boxed{{{}}}", if v { "True" } else { "False" }))
        .collect();
    let doc = json!({
        "by_stage": {
            "baseline": ["\\boxed{[[1, 1], [1, 1]]}"],
            "summarize": ["\\boxed{Recolor every cell blue.}"],
            "apply": ["\\boxed{[[1, 1], [1, 1]]}", "\\boxed{[[2, 2], [2, 2]]}"],
            "verify": verify,
        }
    });
    let path = root.join("script.json");
    fs::write(&path, doc.to_string()).unwrap();
    path
}

pub fn cli(args: &[&str]) -> i32 {
    let mut argv = vec!["modal-arc"];
    argv.extend_from_slice(args);
    modal_arc_cli::run_cli(argv)
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
