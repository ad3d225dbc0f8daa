//! Vision/text synergy reasoning harness for ARC-style grid puzzles.
//!
//! A task's demonstration pairs are shown to a model as rendered images to
//! summarize a transformation rule, the rule is applied to the test input
//! with matrices as text, and the prediction is optionally checked by a
//! critic that sees it rendered again as an image.
//!
//! ```
//! use modal_arc::{Grid, encode_grid_text, parse_grid_text};
//!
//! let g = Grid::from_rows(&[[0u8, 1], [2, 3]]).unwrap();
//! let text = encode_grid_text(&g);
//! assert_eq!(text, "[[0, 1], [2, 3]]");
//! assert_eq!(parse_grid_text(&text).unwrap(), g);
//! ```

pub mod backend;
pub mod dataset;
pub mod eval;
pub mod extract;
pub mod grid;
pub mod message;
pub mod pipeline;
pub mod prompt;
pub mod render;
pub mod runner;

pub use backend::{
    Backend, BackendError, BackendIdentity, BackendKind, ModelRequest, ModelResponse,
    RecordingBackend, RemoteBackend, RemoteConfig, ReplayBackend, RequestTag, Script,
    ScriptedBackend, Stage, TranscriptStore,
};
pub use dataset::{DatasetError, DatasetSource, DatasetSpec, SampleSize};
pub use eval::{aggregate, emit, score_task, EvalError, ReportFormat, RunReport, TaskVerdict};
pub use extract::{
    extract_boxed, parse_matrix_answer, parse_rule, parse_verdict, ExtractError, RuleText,
    Verdict, VerdictValue,
};
pub use grid::{encode_grid_text, grids_equal, parse_grid_text, Grid, GridError, Pair, Task, TaskView};
pub use message::{MessagePart, MessageSeq};
pub use pipeline::{Feedback, Mode, Pipeline, PipelineConfig, PipelineError, TaskResult};
pub use prompt::{audit_no_ground_truth, Modality, PromptFamily, PromptKit, TemplateSet};
pub use render::{decode_image, render_grid, Palette, RenderConfig, RenderError};
pub use runner::{RunError, RunManifest, RunOptions, RunOutcome};
