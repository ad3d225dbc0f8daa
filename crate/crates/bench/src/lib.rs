//! Deterministic fixtures shared by the benchmarks.

use modal_arc::{Grid, Pair, Task};

/// A `rows` x `cols` grid using every colour in a fixed diagonal pattern.
pub fn pattern_grid(rows: usize, cols: usize) -> Grid {
    let cells = (0..rows * cols)
        .map(|i| ((i / cols) * 7 + (i % cols) * 3) as u8 % 10)
        .collect();
    Grid::new(rows, cols, cells).expect("pattern dims are valid")
}

/// A task with `k` square examples of side `side` and one test.
pub fn pattern_task(k: usize, side: usize) -> Task {
    let examples = (0..k)
        .map(|_| Pair::new(pattern_grid(side, side), pattern_grid(side, side)))
        .collect();
    let test = Pair::new(pattern_grid(side, side), pattern_grid(side, side));
    Task::new("bench", examples, vec![test]).expect("pattern task is valid")
}
