//! ARC task loading and seeded benchmark sampling.
//!
//! Three on-disk layouts are understood:
//!
//! * a directory of ARC task documents (`{"train": [...], "test": [...]}`),
//! * a directory of Re-ARC style files, each a bare array of pairs,
//! * a single BARC file: JSON array or JSON Lines of either shape.
//!
//! The document shape is detected per file/item, so the source kind only
//! controls how sampled tasks are split into examples and tests.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grid::{grid_from_wide_rows, Grid, GridError, Pair, Task};

/// Examples per task for the resampled benchmarks.
pub const RESAMPLED_EXAMPLES: usize = 3;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("schema error in {context}: {reason}")]
    Schema { context: String, reason: String },
    #[error("{context}: {section} pair {index}: {source}")]
    Grid {
        context: String,
        section: &'static str,
        index: usize,
        #[source]
        source: GridError,
    },
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("task {task_id} has {pairs} usable pairs, need at least {needed}")]
    InsufficientPairs {
        task_id: String,
        pairs: usize,
        needed: usize,
    },
    #[error("requested {requested} tasks but the pool holds {available}")]
    InsufficientTasks { requested: usize, available: usize },
}

impl DatasetError {
    fn schema(context: &str, reason: impl Into<String>) -> Self {
        DatasetError::Schema {
            context: context.to_owned(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetSource {
    /// Official ARC evaluation tasks, used as published.
    #[serde(rename = "arc-eval", alias = "arc-eval-dir")]
    ArcEval,
    #[serde(rename = "rearc", alias = "rearc-dir", alias = "re-arc")]
    Rearc,
    #[serde(rename = "barc", alias = "barc-file")]
    Barc,
}

impl DatasetSource {
    /// Whether sampled tasks are re-split into three examples and one test.
    pub fn resplits_pairs(self) -> bool {
        matches!(self, DatasetSource::Rearc | DatasetSource::Barc)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetSource::ArcEval => "arc-eval",
            DatasetSource::Rearc => "rearc",
            DatasetSource::Barc => "barc",
        }
    }
}

impl std::str::FromStr for DatasetSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "arc-eval" | "arc-eval-dir" => Ok(DatasetSource::ArcEval),
            "rearc" | "rearc-dir" | "re-arc" => Ok(DatasetSource::Rearc),
            "barc" | "barc-file" => Ok(DatasetSource::Barc),
            other => Err(format!(
                "unknown dataset source {other:?} (expected arc-eval, rearc or barc)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SampleSize {
    Count(usize),
    #[serde(with = "all_literal")]
    All,
}

mod all_literal {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("all")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "all" {
            Ok(())
        } else {
            Err(serde::de::Error::custom(format!("expected \"all\", got {s:?}")))
        }
    }
}

impl std::str::FromStr for SampleSize {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "all" {
            return Ok(SampleSize::All);
        }
        s.parse()
            .map(SampleSize::Count)
            .map_err(|_| format!("sample size must be a count or \"all\", got {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub source: DatasetSource,
    pub sample_size: SampleSize,
    pub seed: u64,
}

/// Parses one ARC task document.
pub fn load_task(id: &str, document: &str) -> Result<Task, DatasetError> {
    let value: Value = serde_json::from_str(document)
        .map_err(|e| DatasetError::schema(id, format!("invalid JSON: {e}")))?;
    task_from_value(id, &value)
}

fn task_from_value(id: &str, value: &Value) -> Result<Task, DatasetError> {
    match value {
        Value::Object(obj) if obj.contains_key("train") || obj.contains_key("test") => {
            let train = pair_list(id, obj.get("train"), "train", true)?;
            let test = pair_list(id, obj.get("test"), "test", false)?;
            if train.is_empty() {
                return Err(DatasetError::schema(id, "\"train\" is empty"));
            }
            if test.is_empty() {
                return Err(DatasetError::schema(id, "\"test\" is empty"));
            }
            Task::new(id, train, test).map_err(|e| DatasetError::schema(id, e.to_string()))
        }
        Value::Object(obj) => {
            let pairs = obj
                .get("pairs")
                .or_else(|| obj.get("examples"))
                .ok_or_else(|| DatasetError::schema(id, "missing \"train\"/\"test\" keys"))?;
            task_from_pairs(id, pairs)
        }
        Value::Array(_) => task_from_pairs(id, value),
        _ => Err(DatasetError::schema(id, "expected a JSON object or array")),
    }
}

// A bare pair list: all but the last pair become examples.
fn task_from_pairs(id: &str, value: &Value) -> Result<Task, DatasetError> {
    let mut pairs = pair_list(id, Some(value), "pairs", true)?;
    if pairs.len() < 2 {
        return Err(DatasetError::schema(
            id,
            format!("pair list needs at least 2 pairs, got {}", pairs.len()),
        ));
    }
    let test = pairs.split_off(pairs.len() - 1);
    Task::new(id, pairs, test).map_err(|e| DatasetError::schema(id, e.to_string()))
}

fn pair_list(
    id: &str,
    value: Option<&Value>,
    section: &'static str,
    output_required: bool,
) -> Result<Vec<Pair>, DatasetError> {
    let items = value
        .ok_or_else(|| DatasetError::schema(id, format!("missing \"{section}\"")))?
        .as_array()
        .ok_or_else(|| DatasetError::schema(id, format!("\"{section}\" is not an array")))?;
    items
        .iter()
        .enumerate()
        .map(|(index, item)| {
            let grid_err = |source| DatasetError::Grid {
                context: id.to_owned(),
                section,
                index,
                source,
            };
            let input = item
                .get("input")
                .ok_or_else(|| {
                    DatasetError::schema(id, format!("{section} pair {index} lacks \"input\""))
                })
                .and_then(|v| value_to_grid(v).map_err(grid_err))?;
            let output = match item.get("output") {
                Some(v) if !v.is_null() => Some(value_to_grid(v).map_err(grid_err)?),
                _ if output_required => {
                    return Err(DatasetError::schema(
                        id,
                        format!("{section} pair {index} lacks \"output\""),
                    ))
                }
                _ => None,
            };
            Ok(Pair { input, output })
        })
        .collect()
}

fn value_to_grid(value: &Value) -> Result<Grid, GridError> {
    let malformed = |reason: &str| GridError::Malformed {
        offset: 0,
        reason: reason.to_owned(),
    };
    let rows = value.as_array().ok_or_else(|| malformed("grid is not an array"))?;
    let mut wide = Vec::with_capacity(rows.len());
    for row in rows {
        let row = row.as_array().ok_or_else(|| malformed("row is not an array"))?;
        let mut cells = Vec::with_capacity(row.len());
        for cell in row {
            let v = match cell {
                Value::Number(n) => {
                    if let Some(v) = n.as_u64() {
                        v
                    } else if n.as_i64().is_some() {
                        return Err(GridError::ValueOutOfRange { value: u64::MAX });
                    } else {
                        return Err(malformed("non-integer cell"));
                    }
                }
                _ => return Err(malformed("non-integer cell")),
            };
            cells.push(v);
        }
        wide.push(cells);
    }
    grid_from_wide_rows(&wide)
}

/// Loads every task under `path`. The result is sorted by task id.
pub fn load_pool(path: &Path) -> Result<Vec<Task>, DatasetError> {
    let io = |source| DatasetError::Io {
        path: path.to_owned(),
        source,
    };
    let mut tasks = if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_file()
                    && matches!(
                        p.extension().and_then(|e| e.to_str()),
                        Some("json" | "jsonl")
                    )
            })
            .collect();
        files.sort();
        let per_file: Vec<Vec<Task>> = files
            .par_iter()
            .map(|f| load_file(f))
            .collect::<Result<_, _>>()?;
        per_file.into_iter().flatten().collect()
    } else {
        load_file(path)?
    };
    tasks.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = tasks.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(DatasetError::schema(
            &w[0].id,
            "duplicate task id in pool",
        ));
    }
    Ok(tasks)
}

/// Loads one file: a single task document, a bare pair array, an array of
/// tasks, or JSON Lines.
pub fn load_file(path: &Path) -> Result<Vec<Task>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("task")
        .to_owned();

    if path.extension().and_then(|e| e.to_str()) == Some("jsonl") {
        return text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, line)| {
                let ctx = format!("{stem}:{}", i + 1);
                let value: Value = serde_json::from_str(line)
                    .map_err(|e| DatasetError::schema(&ctx, format!("invalid JSON: {e}")))?;
                let id = item_id(&value).unwrap_or_else(|| format!("{stem}_{i:05}"));
                task_from_value(&id, &value)
            })
            .collect();
    }

    let value: Value = serde_json::from_str(&text)
        .map_err(|e| DatasetError::schema(&stem, format!("invalid JSON: {e}")))?;
    if is_task_collection(&value) {
        let items = value.as_array().expect("collection is an array");
        return items
            .iter()
            .enumerate()
            .map(|(i, item)| {
                let id = item_id(item).unwrap_or_else(|| format!("{stem}_{i:05}"));
                task_from_value(&id, item)
            })
            .collect();
    }
    Ok(vec![task_from_value(&stem, &value)?])
}

fn item_id(value: &Value) -> Option<String> {
    value.get("id").and_then(Value::as_str).map(str::to_owned)
}

// An array whose items are tasks (or pair arrays) rather than {input, output} pairs.
fn is_task_collection(value: &Value) -> bool {
    value.as_array().is_some_and(|items| {
        items.first().is_some_and(|first| {
            first.is_array() || first.get("train").is_some() || first.get("pairs").is_some()
                || first.get("examples").is_some()
        })
    })
}

fn task_seed(seed: u64, task_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(task_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Seeded selection without replacement.
///
/// The pool is ordered by id first, so directory enumeration order never
/// matters. Re-ARC and BARC tasks have their pairs shuffled with a
/// task-scoped seed and are cut to three examples plus one test.
pub fn sample_tasks(spec: &DatasetSpec, pool: &[Task]) -> Result<Vec<Task>, DatasetError> {
    let mut sorted: Vec<&Task> = pool.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));

    let selected: Vec<&Task> = match spec.sample_size {
        SampleSize::All => sorted,
        SampleSize::Count(n) if n > sorted.len() => {
            return Err(DatasetError::InsufficientTasks {
                requested: n,
                available: sorted.len(),
            })
        }
        SampleSize::Count(n) => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let mut picks = index::sample(&mut rng, sorted.len(), n).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(|i| sorted[i]).collect()
        }
    };

    if !spec.source.resplits_pairs() {
        return Ok(selected.into_iter().cloned().collect());
    }
    selected
        .into_iter()
        .map(|task| resplit(task, spec.seed))
        .collect()
}

fn resplit(task: &Task, seed: u64) -> Result<Task, DatasetError> {
    let mut pairs: Vec<Pair> = task
        .examples
        .iter()
        .chain(&task.tests)
        .filter(|p| p.output.is_some())
        .cloned()
        .collect();
    let needed = RESAMPLED_EXAMPLES + 1;
    if pairs.len() < needed {
        return Err(DatasetError::InsufficientPairs {
            task_id: task.id.clone(),
            pairs: pairs.len(),
            needed,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(task_seed(seed, &task.id));
    pairs.shuffle(&mut rng);
    pairs.truncate(needed);
    let test = pairs.split_off(RESAMPLED_EXAMPLES);
    Task::new(task.id.clone(), pairs, test).map_err(|e| DatasetError::schema(&task.id, e.to_string()))
}
