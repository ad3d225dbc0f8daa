//! Prompt construction for every pipeline stage.
//!
//! Wording lives in plain-text templates (`templates/*.txt`, compiled in
//! as defaults and overridable from a directory at runtime). Templates mark
//! insertion points with `{{name}}`; the builder expands them into text or
//! image parts depending on the prompt family's modality.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::RuleText;
use crate::grid::{encode_grid_text, Grid, Task, TaskView};
use crate::message::{GridRole, MessagePart, MessageSeq, PartContent, PartOrigin};
use crate::render::{color_legend_text, render_png, RenderConfig, RenderError};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("prompt family {family} requires {argument}")]
    MissingArgument {
        family: PromptFamily,
        argument: &'static str,
    },
    #[error("test index {index} out of range for task {task_id} ({count} test inputs)")]
    TestIndexOutOfRange {
        task_id: String,
        index: usize,
        count: usize,
    },
    #[error("ground-truth test output detected in prompt for task {task_id}")]
    GroundTruthLeak { task_id: String },
    #[error("template {name}: {reason}")]
    Template { name: String, reason: String },
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Render(#[from] RenderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Vision,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Vision => "vision",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(Modality::Text),
            "vision" => Ok(Modality::Vision),
            other => Err(format!("unknown modality {other:?} (expected text or vision)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptFamily {
    TextBaseline,
    RuleSummarizationVision,
    RuleSummarizationText,
    RuleApplicationText,
    RuleApplicationVision,
    VerificationVision,
    VerificationText,
    RefinementText,
}

impl PromptFamily {
    pub const ALL: [PromptFamily; 8] = [
        PromptFamily::TextBaseline,
        PromptFamily::RuleSummarizationVision,
        PromptFamily::RuleSummarizationText,
        PromptFamily::RuleApplicationText,
        PromptFamily::RuleApplicationVision,
        PromptFamily::VerificationVision,
        PromptFamily::VerificationText,
        PromptFamily::RefinementText,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptFamily::TextBaseline => "text_baseline",
            PromptFamily::RuleSummarizationVision => "rule_summarization_vision",
            PromptFamily::RuleSummarizationText => "rule_summarization_text",
            PromptFamily::RuleApplicationText => "rule_application_text",
            PromptFamily::RuleApplicationVision => "rule_application_vision",
            PromptFamily::VerificationVision => "verification_vision",
            PromptFamily::VerificationText => "verification_text",
            PromptFamily::RefinementText => "refinement_text",
        }
    }

    /// Refinement reuses the text application template with feedback filled in.
    fn template_name(self) -> &'static str {
        match self {
            PromptFamily::RefinementText => "rule_application_text",
            other => other.as_str(),
        }
    }

    pub fn modality(self) -> Modality {
        match self {
            PromptFamily::RuleSummarizationVision
            | PromptFamily::RuleApplicationVision
            | PromptFamily::VerificationVision => Modality::Vision,
            _ => Modality::Text,
        }
    }

    pub fn summarization(modality: Modality) -> Self {
        match modality {
            Modality::Text => PromptFamily::RuleSummarizationText,
            Modality::Vision => PromptFamily::RuleSummarizationVision,
        }
    }

    pub fn application(modality: Modality) -> Self {
        match modality {
            Modality::Text => PromptFamily::RuleApplicationText,
            Modality::Vision => PromptFamily::RuleApplicationVision,
        }
    }

    pub fn verification(modality: Modality) -> Self {
        match modality {
            Modality::Text => PromptFamily::VerificationText,
            Modality::Vision => PromptFamily::VerificationVision,
        }
    }

    /// Fixed phrase every prompt of this family must contain.
    pub fn anchor(self) -> &'static str {
        match self {
            PromptFamily::TextBaseline => "Put the output matrix within",
            PromptFamily::RuleSummarizationVision | PromptFamily::RuleSummarizationText => {
                "Output the rule you learned within"
            }
            PromptFamily::RuleApplicationText
            | PromptFamily::RuleApplicationVision
            | PromptFamily::RefinementText => "check the correctness of the rule",
            PromptFamily::VerificationVision | PromptFamily::VerificationText => {
                "\\boxed{True} or \\boxed{False}"
            }
        }
    }
}

impl fmt::Display for PromptFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Information about a rejected attempt, appended to a refinement prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub previous_prediction: Option<Grid>,
    pub critic_rationale: String,
    /// Zero-based round that produced `previous_prediction`.
    pub round_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Marker {
    Examples,
    TestInput,
    Prediction,
    Rule,
    Legend,
    Feedback,
    Round,
    PreviousPrediction,
    Rationale,
    Index,
    Input,
    Output,
}

impl Marker {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "examples" => Marker::Examples,
            "test_input" => Marker::TestInput,
            "prediction" => Marker::Prediction,
            "rule" => Marker::Rule,
            "legend" => Marker::Legend,
            "feedback" => Marker::Feedback,
            "round" => Marker::Round,
            "previous_prediction" => Marker::PreviousPrediction,
            "rationale" => Marker::Rationale,
            "index" => Marker::Index,
            "input" => Marker::Input,
            "output" => Marker::Output,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Marker(Marker),
}

#[derive(Debug, Clone)]
struct Template {
    source: String,
    segments: Vec<Segment>,
}

/// `(name, required markers, optional markers)` for every shipped template.
const TEMPLATE_SPECS: [(&str, &[Marker], &[Marker]); 9] = [
    ("text_baseline", &[Marker::Examples, Marker::TestInput], &[]),
    ("rule_summarization_vision", &[Marker::Examples], &[]),
    ("rule_summarization_text", &[Marker::Examples], &[]),
    (
        "rule_application_text",
        &[Marker::Rule, Marker::Examples, Marker::TestInput, Marker::Feedback],
        &[Marker::Legend],
    ),
    (
        "rule_application_vision",
        &[Marker::Rule, Marker::Examples, Marker::TestInput, Marker::Feedback],
        &[Marker::Legend],
    ),
    (
        "verification_vision",
        &[Marker::Examples, Marker::TestInput, Marker::Prediction],
        &[],
    ),
    (
        "verification_text",
        &[Marker::Examples, Marker::TestInput, Marker::Prediction],
        &[],
    ),
    (
        "refinement_feedback",
        &[Marker::PreviousPrediction, Marker::Rationale],
        &[Marker::Round],
    ),
    (
        "example_pair",
        &[Marker::Input, Marker::Output],
        &[Marker::Index],
    ),
];

const BUILTIN: [(&str, &str); 9] = [
    ("text_baseline", include_str!("../templates/text_baseline.txt")),
    (
        "rule_summarization_vision",
        include_str!("../templates/rule_summarization_vision.txt"),
    ),
    (
        "rule_summarization_text",
        include_str!("../templates/rule_summarization_text.txt"),
    ),
    (
        "rule_application_text",
        include_str!("../templates/rule_application_text.txt"),
    ),
    (
        "rule_application_vision",
        include_str!("../templates/rule_application_vision.txt"),
    ),
    ("verification_vision", include_str!("../templates/verification_vision.txt")),
    ("verification_text", include_str!("../templates/verification_text.txt")),
    ("refinement_feedback", include_str!("../templates/refinement_feedback.txt")),
    ("example_pair", include_str!("../templates/example_pair.txt")),
];

impl Template {
    fn parse(name: &str, source: &str) -> Result<Self, PromptError> {
        let err = |reason: String| PromptError::Template {
            name: name.to_owned(),
            reason,
        };
        let mut segments = Vec::new();
        let mut rest = source;
        while let Some(open) = rest.find("{{") {
            if open > 0 {
                segments.push(Segment::Literal(rest[..open].to_owned()));
            }
            let after = &rest[open + 2..];
            let close = after
                .find("}}")
                .ok_or_else(|| err("unclosed '{{' marker".into()))?;
            let marker_name = after[..close].trim();
            let marker = Marker::parse(marker_name)
                .ok_or_else(|| err(format!("unknown marker {{{{{marker_name}}}}}")))?;
            segments.push(Segment::Marker(marker));
            rest = &after[close + 2..];
        }
        if !rest.is_empty() {
            segments.push(Segment::Literal(rest.to_owned()));
        }

        let (_, required, optional) = TEMPLATE_SPECS
            .iter()
            .find(|(n, _, _)| *n == name)
            .ok_or_else(|| err("not a known template name".into()))?;
        let used: Vec<Marker> = segments
            .iter()
            .filter_map(|s| match s {
                Segment::Marker(m) => Some(*m),
                Segment::Literal(_) => None,
            })
            .collect();
        if let Some(missing) = required.iter().find(|m| !used.contains(m)) {
            return Err(err(format!("missing required marker {missing:?}")));
        }
        if let Some(extra) = used
            .iter()
            .find(|m| !required.contains(m) && !optional.contains(m))
        {
            return Err(err(format!("marker {extra:?} is not allowed here")));
        }
        Ok(Self {
            source: source.to_owned(),
            segments,
        })
    }
}

/// The full set of prompt templates.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<&'static str, Template>,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let templates = BUILTIN
            .iter()
            .map(|&(name, src)| {
                let t = Template::parse(name, src).expect("built-in templates are valid");
                (name, t)
            })
            .collect();
        Self { templates }
    }

    /// Loads `<name>.txt` files from `dir`; templates absent from the
    /// directory keep their built-in wording.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::builtin();
        for (name, _) in BUILTIN {
            let path = dir.join(format!("{name}.txt"));
            if !path.exists() {
                continue;
            }
            let src = fs::read_to_string(&path).map_err(|source| PromptError::Io {
                path: path.display().to_string(),
                source,
            })?;
            set.templates.insert(name, Template::parse(name, &src)?);
        }
        Ok(set)
    }

    /// SHA-256 over every template's name and source, in name order.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (name, t) in &self.templates {
            h.update(name.as_bytes());
            h.update([0]);
            h.update(t.source.as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }

    pub fn source(&self, name: &str) -> Option<&str> {
        self.templates.get(name).map(|t| t.source.as_str())
    }

    fn get(&self, name: &str) -> &Template {
        &self.templates[name]
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Optional inputs a prompt family may need.
#[derive(Debug, Clone, Copy, Default)]
pub struct PromptArgs<'a> {
    pub test_index: usize,
    pub rule: Option<&'a RuleText>,
    pub prediction: Option<&'a Grid>,
    pub feedback: Option<&'a Feedback>,
}

struct BuildCtx<'a, 'b> {
    family: PromptFamily,
    view: &'b TaskView<'a>,
    args: &'b PromptArgs<'b>,
    test_input: &'a Grid,
    example: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct PromptKit {
    templates: TemplateSet,
    render: RenderConfig,
    legend: String,
}

impl PromptKit {
    pub fn new(templates: TemplateSet, render: RenderConfig) -> Result<Self, PromptError> {
        render.validate()?;
        let legend = color_legend_text(&render.palette);
        Ok(Self {
            templates,
            render,
            legend,
        })
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn render_config(&self) -> &RenderConfig {
        &self.render
    }

    pub fn build(
        &self,
        family: PromptFamily,
        view: &TaskView<'_>,
        args: &PromptArgs<'_>,
    ) -> Result<MessageSeq, PromptError> {
        let missing = |argument| PromptError::MissingArgument { family, argument };
        match family {
            PromptFamily::RuleApplicationText | PromptFamily::RuleApplicationVision
                if args.rule.is_none() =>
            {
                return Err(missing("a rule"))
            }
            PromptFamily::RefinementText if args.rule.is_none() => return Err(missing("a rule")),
            PromptFamily::RefinementText if args.feedback.is_none() => {
                return Err(missing("feedback"))
            }
            PromptFamily::VerificationText | PromptFamily::VerificationVision
                if args.prediction.is_none() =>
            {
                return Err(missing("a prediction"))
            }
            _ => {}
        }
        let test_input =
            view.test_input(args.test_index)
                .ok_or_else(|| PromptError::TestIndexOutOfRange {
                    task_id: view.id().to_owned(),
                    index: args.test_index,
                    count: view.test_inputs().len(),
                })?;
        let ctx = BuildCtx {
            family,
            view,
            args,
            test_input,
            example: None,
        };
        let mut parts = Vec::new();
        self.expand(self.templates.get(family.template_name()), &ctx, &mut parts)?;
        Ok(MessageSeq::single_user(parts))
    }

    fn expand(
        &self,
        template: &Template,
        ctx: &BuildCtx<'_, '_>,
        out: &mut Vec<MessagePart>,
    ) -> Result<(), PromptError> {
        let modality = ctx.family.modality();
        for segment in &template.segments {
            match segment {
                Segment::Literal(text) => out.push(MessagePart::text(text.clone())),
                Segment::Marker(marker) => match marker {
                    Marker::Examples => {
                        let pair_template = self.templates.get("example_pair");
                        for k in 0..ctx.view.k() {
                            let inner = BuildCtx {
                                example: Some(k),
                                ..*ctx
                            };
                            self.expand(pair_template, &inner, out)?;
                        }
                    }
                    Marker::Index => {
                        let k = ctx.example.expect("index marker only inside example_pair");
                        out.push(MessagePart::text((k + 1).to_string()));
                    }
                    Marker::Input | Marker::Output => {
                        let k = ctx.example.expect("example marker only inside example_pair");
                        let pair = ctx.view.examples()[k];
                        let (grid, role) = if *marker == Marker::Input {
                            (pair.input, GridRole::ExampleInput(k))
                        } else {
                            (pair.output, GridRole::ExampleOutput(k))
                        };
                        out.push(self.grid_part(grid, role, modality)?);
                    }
                    Marker::TestInput => out.push(self.grid_part(
                        ctx.test_input,
                        GridRole::TestInput(ctx.args.test_index),
                        modality,
                    )?),
                    Marker::Prediction => {
                        let grid = ctx.args.prediction.expect("checked in build");
                        out.push(self.grid_part(grid, GridRole::Prediction, modality)?);
                    }
                    Marker::Rule => {
                        let rule = ctx.args.rule.expect("checked in build");
                        out.push(MessagePart::text(rule.as_str()).with_origin(PartOrigin::Model));
                    }
                    Marker::Legend => out.push(MessagePart::text(self.legend.clone())),
                    Marker::Feedback => {
                        if ctx.args.feedback.is_some() {
                            self.expand(self.templates.get("refinement_feedback"), ctx, out)?;
                        }
                    }
                    Marker::Round => {
                        let fb = ctx.args.feedback.expect("inside feedback block");
                        out.push(MessagePart::text((fb.round_index + 1).to_string()));
                    }
                    Marker::PreviousPrediction => {
                        let fb = ctx.args.feedback.expect("inside feedback block");
                        out.push(match &fb.previous_prediction {
                            Some(g) => {
                                self.grid_part(g, GridRole::PreviousPrediction, Modality::Text)?
                            }
                            None => MessagePart::text("(no parsable matrix was produced)"),
                        });
                    }
                    Marker::Rationale => {
                        let fb = ctx.args.feedback.expect("inside feedback block");
                        out.push(
                            MessagePart::text(fb.critic_rationale.trim())
                                .with_origin(PartOrigin::Model),
                        );
                    }
                },
            }
        }
        Ok(())
    }

    fn grid_part(
        &self,
        grid: &Grid,
        role: GridRole,
        modality: Modality,
    ) -> Result<MessagePart, PromptError> {
        let part = match modality {
            Modality::Text => MessagePart::text(encode_grid_text(grid)),
            Modality::Vision => MessagePart::image(render_png(grid, &self.render)?),
        };
        Ok(part.with_origin(PartOrigin::Grid(role)))
    }

    /// Checks `seq` against the task's ground truth using this kit's
    /// render settings.
    pub fn audit(&self, seq: &MessageSeq, task: &Task) -> bool {
        audit_no_ground_truth(seq, task, &self.render)
    }

    /// Builds a prompt from the redacted view of `task` and audits it.
    pub fn build_audited(
        &self,
        family: PromptFamily,
        task: &Task,
        args: &PromptArgs<'_>,
    ) -> Result<MessageSeq, PromptError> {
        let seq = self.build(family, &task.redacted(), args)?;
        if !self.audit(&seq, task) {
            return Err(PromptError::GroundTruthLeak {
                task_id: task.id.clone(),
            });
        }
        Ok(seq)
    }
}

fn strip_ws(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

/// True iff no test ground-truth output appears in `seq`, as text or as a
/// rendered image.
///
/// Grid parts that faithfully reproduce the example or test-input grid they
/// claim to show are legitimate even when that grid happens to equal the
/// ground truth. Predictions and model-written text are not ground truth.
pub fn audit_no_ground_truth(seq: &MessageSeq, task: &Task, cfg: &RenderConfig) -> bool {
    let truths: Vec<&Grid> = task.tests.iter().filter_map(|p| p.output.as_ref()).collect();
    if truths.is_empty() {
        return true;
    }
    let has_images = seq.image_count() > 0;
    let truth_texts: Vec<String> = truths.iter().map(|g| encode_grid_text(g)).collect();
    let truth_compact: Vec<String> = truth_texts.iter().map(|t| strip_ws(t)).collect();
    let truth_pngs: Vec<Vec<u8>> = if has_images {
        truths.iter().filter_map(|g| render_png(g, cfg).ok()).collect()
    } else {
        Vec::new()
    };

    let declared_source = |role: GridRole| -> Option<&Grid> {
        match role {
            GridRole::ExampleInput(k) => task.examples.get(k).map(|p| &p.input),
            GridRole::ExampleOutput(k) => task.examples.get(k).and_then(|p| p.output.as_ref()),
            GridRole::TestInput(i) => task.tests.get(i).map(|p| &p.input),
            GridRole::Prediction | GridRole::PreviousPrediction => None,
        }
    };

    for part in seq.parts() {
        match part.origin {
            PartOrigin::Model
            | PartOrigin::Grid(GridRole::Prediction)
            | PartOrigin::Grid(GridRole::PreviousPrediction) => continue,
            PartOrigin::Grid(role) => {
                let faithful = declared_source(role).is_some_and(|src| match &part.content {
                    PartContent::Text(t) => *t == encode_grid_text(src),
                    PartContent::Image(img) => render_png(src, cfg)
                        .map(|png| png == img.bytes())
                        .unwrap_or(false),
                });
                if faithful {
                    continue;
                }
            }
            PartOrigin::Template => {}
        }
        match &part.content {
            PartContent::Text(t) => {
                let compact = strip_ws(t);
                if truth_compact.iter().any(|tt| compact.contains(tt.as_str())) {
                    return false;
                }
            }
            PartContent::Image(img) => {
                if truth_pngs.iter().any(|png| png.as_slice() == img.bytes()) {
                    return false;
                }
            }
        }
    }
    true
}
