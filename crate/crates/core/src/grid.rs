//! Grids, demonstration pairs and tasks, plus the nested-list text codec.
//!
//! The canonical text form is `[[0, 1, 2], [3, 4, 5]]`: rows bracketed,
//! cells and rows separated by `", "`. The parser accepts any whitespace
//! between tokens.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Largest row or column count an ARC grid may have.
pub const MAX_DIM: usize = 30;

/// Largest cell value.
pub const MAX_VALUE: u8 = 9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GridError {
    #[error("ragged rows: row {row} has {found} cells, expected {expected}")]
    RaggedRows {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("cell value {value} out of range 0..=9")]
    ValueOutOfRange { value: u64 },
    #[error("grid size {rows}x{cols} out of range 1..=30")]
    SizeOutOfRange { rows: usize, cols: usize },
    #[error("malformed matrix text at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
}

/// A rectangular matrix of cell values `0..=9`, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Grid {
    rows: usize,
    cols: usize,
    cells: Vec<u8>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, cells: Vec<u8>) -> Result<Self, GridError> {
        check_dims(rows, cols)?;
        if cells.len() != rows * cols {
            return Err(GridError::RaggedRows {
                row: cells.len() / cols,
                expected: cols,
                found: cells.len() % cols,
            });
        }
        if let Some(&value) = cells.iter().find(|&&v| v > MAX_VALUE) {
            return Err(GridError::ValueOutOfRange {
                value: u64::from(value),
            });
        }
        Ok(Self { rows, cols, cells })
    }

    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self, GridError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut cells = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(GridError::RaggedRows {
                    row: i,
                    expected: cols,
                    found: row.len(),
                });
            }
            cells.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, cells)
    }

    /// A grid filled with a single value.
    pub fn filled(rows: usize, cols: usize, value: u8) -> Result<Self, GridError> {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> Option<u8> {
        (row < self.rows && col < self.cols).then(|| self.cells[row * self.cols + col])
    }

    pub fn row(&self, row: usize) -> &[u8] {
        &self.cells[row * self.cols..(row + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[u8]> {
        self.cells.chunks(self.cols)
    }

    /// Canonical nested-list text.
    pub fn to_text(&self) -> String {
        encode_grid_text(self)
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&encode_grid_text(self))
    }
}

impl std::str::FromStr for Grid {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_grid_text(s)
    }
}

fn check_dims(rows: usize, cols: usize) -> Result<(), GridError> {
    if !(1..=MAX_DIM).contains(&rows) || !(1..=MAX_DIM).contains(&cols) {
        return Err(GridError::SizeOutOfRange { rows, cols });
    }
    Ok(())
}

// ARC task files store grids as nested integer arrays.
impl Serialize for Grid {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<&[u8]> = self.iter_rows().collect();
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Grid {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rows: Vec<Vec<u64>> = Vec::deserialize(deserializer)?;
        grid_from_wide_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Builds a grid from rows of arbitrary-width integers, reporting
/// out-of-range values instead of truncating them.
pub fn grid_from_wide_rows(rows: &[Vec<u64>]) -> Result<Grid, GridError> {
    let cols = rows.first().map_or(0, Vec::len);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != cols {
            return Err(GridError::RaggedRows {
                row: i,
                expected: cols,
                found: row.len(),
            });
        }
    }
    check_dims(rows.len(), cols)?;
    let mut cells = Vec::with_capacity(rows.len() * cols);
    for &value in rows.iter().flatten() {
        if value > u64::from(MAX_VALUE) {
            return Err(GridError::ValueOutOfRange { value });
        }
        cells.push(value as u8);
    }
    Grid::new(rows.len(), cols, cells)
}

/// One demonstration or test pair. Test pairs may lack the output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub input: Grid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<Grid>,
}

impl Pair {
    pub fn new(input: Grid, output: Grid) -> Self {
        Self {
            input,
            output: Some(output),
        }
    }

    pub fn unsolved(input: Grid) -> Self {
        Self {
            input,
            output: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaskError {
    #[error("task has no demonstration pairs")]
    NoExamples,
    #[error("task has no test pairs")]
    NoTests,
    #[error("demonstration pair {0} has no output")]
    ExampleWithoutOutput(usize),
}

/// `K >= 1` demonstration pairs plus at least one test pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub examples: Vec<Pair>,
    pub tests: Vec<Pair>,
}

impl Task {
    pub fn new(
        id: impl Into<String>,
        examples: Vec<Pair>,
        tests: Vec<Pair>,
    ) -> Result<Self, TaskError> {
        if examples.is_empty() {
            return Err(TaskError::NoExamples);
        }
        if tests.is_empty() {
            return Err(TaskError::NoTests);
        }
        if let Some(i) = examples.iter().position(|p| p.output.is_none()) {
            return Err(TaskError::ExampleWithoutOutput(i));
        }
        Ok(Self {
            id: id.into(),
            examples,
            tests,
        })
    }

    pub fn k(&self) -> usize {
        self.examples.len()
    }

    /// True when every test pair carries its ground-truth output.
    pub fn has_ground_truth(&self) -> bool {
        self.tests.iter().all(|p| p.output.is_some())
    }

    /// The view handed to prompt builders: test outputs are not reachable
    /// through it.
    pub fn redacted(&self) -> TaskView<'_> {
        TaskView {
            id: &self.id,
            examples: self
                .examples
                .iter()
                .map(|p| ExamplePair {
                    input: &p.input,
                    output: p.output.as_ref().expect("validated example output"),
                })
                .collect(),
            test_inputs: self.tests.iter().map(|p| &p.input).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ExamplePair<'a> {
    pub input: &'a Grid,
    pub output: &'a Grid,
}

/// Read-only task view without test ground truth.
#[derive(Debug, Clone)]
pub struct TaskView<'a> {
    id: &'a str,
    examples: Vec<ExamplePair<'a>>,
    test_inputs: Vec<&'a Grid>,
}

impl<'a> TaskView<'a> {
    pub fn id(&self) -> &'a str {
        self.id
    }

    pub fn examples(&self) -> &[ExamplePair<'a>] {
        &self.examples
    }

    pub fn k(&self) -> usize {
        self.examples.len()
    }

    pub fn test_inputs(&self) -> &[&'a Grid] {
        &self.test_inputs
    }

    pub fn test_input(&self, index: usize) -> Option<&'a Grid> {
        self.test_inputs.get(index).copied()
    }
}

/// Canonical nested-list text of a grid.
pub fn encode_grid_text(g: &Grid) -> String {
    // "[[" + per cell "d, " + per row "], [" is a close upper bound
    let mut out = String::with_capacity(4 + g.rows * (g.cols * 3 + 4));
    out.push('[');
    for (r, row) in g.iter_rows().enumerate() {
        if r > 0 {
            out.push_str(", ");
        }
        out.push('[');
        for (c, &v) in row.iter().enumerate() {
            if c > 0 {
                out.push_str(", ");
            }
            out.push(char::from(b'0' + v));
        }
        out.push(']');
    }
    out.push(']');
    out
}

pub fn grids_equal(a: &Grid, b: &Grid) -> bool {
    a == b
}

/// Parses a nested-list literal such as `[[0,1],[2,3]]`.
///
/// The whole input (modulo surrounding whitespace) must be exactly one
/// two-level list of integers.
pub fn parse_grid_text(text: &str) -> Result<Grid, GridError> {
    Parser::new(text).parse()
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            bytes: text.as_bytes(),
            pos: 0,
        }
    }

    fn malformed(&self, reason: impl Into<String>) -> GridError {
        GridError::Malformed {
            offset: self.pos,
            reason: reason.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn expect(&mut self, byte: u8) -> Result<(), GridError> {
        match self.peek() {
            Some(b) if b == byte => {
                self.pos += 1;
                Ok(())
            }
            Some(b) => Err(self.malformed(format!(
                "expected '{}', found '{}'",
                byte as char,
                char::from(b).escape_default()
            ))),
            None => Err(self.malformed(format!("expected '{}', found end of input", byte as char))),
        }
    }

    fn parse(mut self) -> Result<Grid, GridError> {
        self.expect(b'[')?;
        let mut rows: Vec<Vec<u8>> = Vec::new();
        if self.peek() == Some(b']') {
            self.pos += 1;
        } else {
            loop {
                rows.push(self.parse_row()?);
                match self.peek() {
                    Some(b',') => self.pos += 1,
                    Some(b']') => {
                        self.pos += 1;
                        break;
                    }
                    Some(_) => return Err(self.malformed("expected ',' or ']' after row")),
                    None => return Err(self.malformed("unbalanced brackets")),
                }
            }
        }
        if self.peek().is_some() {
            return Err(self.malformed("trailing characters after matrix"));
        }
        if rows.is_empty() {
            return Err(GridError::SizeOutOfRange { rows: 0, cols: 0 });
        }
        Grid::from_rows(&rows)
    }

    fn parse_row(&mut self) -> Result<Vec<u8>, GridError> {
        self.expect(b'[')?;
        let mut row = Vec::new();
        if self.peek() == Some(b']') {
            self.pos += 1;
            return Ok(row);
        }
        loop {
            row.push(self.parse_cell()?);
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b']') => {
                    self.pos += 1;
                    return Ok(row);
                }
                Some(_) => return Err(self.malformed("expected ',' or ']' after cell")),
                None => return Err(self.malformed("unbalanced brackets")),
            }
        }
    }

    fn parse_cell(&mut self) -> Result<u8, GridError> {
        let negative = match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                true
            }
            Some(b'+') => {
                self.pos += 1;
                false
            }
            _ => false,
        };
        let start = self.pos;
        let mut value: u64 = 0;
        while let Some(&b) = self.bytes.get(self.pos) {
            if !b.is_ascii_digit() {
                break;
            }
            value = value.saturating_mul(10).saturating_add(u64::from(b - b'0'));
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.malformed("expected an integer cell"));
        }
        if matches!(self.bytes.get(self.pos), Some(b'.' | b'e' | b'E')) {
            return Err(self.malformed("non-integer cell"));
        }
        if negative && value != 0 {
            return Err(GridError::ValueOutOfRange { value });
        }
        u8::try_from(value)
            .ok()
            .filter(|&v| v <= MAX_VALUE)
            .ok_or(GridError::ValueOutOfRange { value })
    }
}
