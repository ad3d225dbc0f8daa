//! Turns free-form model replies into rules, matrices and verdicts.
//!
//! Every extractor commits to the *last* `\boxed{...}` group in a reply:
//! reasoning models often box interim drafts before the final answer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{parse_grid_text, Grid, GridError};

const BOX_OPEN: &str = "\\boxed{";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("no matrix answer found in response")]
    NoAnswerFound,
    #[error("matrix answer is invalid: {0}")]
    Grid(#[from] GridError),
    #[error("response is empty")]
    EmptyResponse,
}

/// A natural-language transformation rule; never blank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RuleText(String);

impl RuleText {
    pub fn new(body: impl Into<String>) -> Result<Self, ExtractError> {
        let body = body.into();
        let trimmed = body.trim();
        if trimmed.is_empty() {
            return Err(ExtractError::EmptyResponse);
        }
        Ok(Self(trimmed.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for RuleText {
    type Error = ExtractError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::new(s)
    }
}

impl From<RuleText> for String {
    fn from(r: RuleText) -> Self {
        r.0
    }
}

impl std::fmt::Display for RuleText {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictValue {
    Yes,
    No,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseQuality {
    Explicit,
    /// No boxed True/False was found; the value fell back to `yes`.
    Defaulted,
    /// Not parsed from a reply at all (e.g. no prediction to verify).
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub value: VerdictValue,
    /// The boxed payload the verdict was read from; empty when defaulted.
    pub raw: String,
    pub parse_quality: ParseQuality,
}

impl Verdict {
    pub fn is_yes(&self) -> bool {
        self.value == VerdictValue::Yes
    }

    pub(crate) fn synthetic_no() -> Self {
        Self {
            value: VerdictValue::No,
            raw: String::new(),
            parse_quality: ParseQuality::Synthetic,
        }
    }
}

/// Byte ranges `(start, end)` of every balanced `\boxed{...}` payload,
/// ordered by the position of the opening marker.
fn boxed_spans(text: &str) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut search = 0;
    while let Some(found) = text[search..].find(BOX_OPEN) {
        let start = search + found + BOX_OPEN.len();
        let mut depth = 1usize;
        let mut end = None;
        for (i, &b) in bytes[start..].iter().enumerate() {
            match b {
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(start + i);
                        break;
                    }
                }
                _ => {}
            }
        }
        if let Some(end) = end {
            spans.push((start, end));
        }
        search = start;
    }
    spans
}

/// Content of the last balanced `\boxed{...}` group.
pub fn extract_boxed(text: &str) -> Option<&str> {
    boxed_spans(text).last().map(|&(s, e)| &text[s..e])
}

/// Byte ranges of top-level bracket groups that open with `[[`.
fn nested_list_spans(text: &str) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'[' {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < bytes.len() && bytes[j].is_ascii_whitespace() {
            j += 1;
        }
        if j >= bytes.len() || bytes[j] != b'[' {
            i += 1;
            continue;
        }
        let mut depth = 0usize;
        let mut end = None;
        for (k, &b) in bytes[i..].iter().enumerate() {
            match b {
                b'[' => depth += 1,
                b']' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(i + k + 1);
                        break;
                    }
                }
                _ => {}
            }
        }
        match end {
            Some(end) => {
                spans.push((i, end));
                i = end;
            }
            None => break,
        }
    }
    spans
}

fn last_nested_list(text: &str) -> Option<&str> {
    nested_list_spans(text).last().map(|&(s, e)| &text[s..e])
}

/// Reads the predicted output matrix from a reply.
///
/// The boxed payload wins; without one, the last `[[...]]` literal in the
/// text is used.
pub fn parse_matrix_answer(text: &str) -> Result<Grid, ExtractError> {
    if let Some(payload) = extract_boxed(text) {
        if let Ok(g) = parse_grid_text(payload) {
            return Ok(g);
        }
        if let Some(inner) = last_nested_list(payload) {
            return Ok(parse_grid_text(inner)?);
        }
        // the box holds no matrix (e.g. a boxed word); look outside it
    }
    match last_nested_list(text) {
        Some(literal) => Ok(parse_grid_text(literal)?),
        None => Err(ExtractError::NoAnswerFound),
    }
}

fn strip_text_macro(payload: &str) -> &str {
    let p = payload.trim();
    for prefix in ["\\text{", "\\textbf{", "\\mathrm{"] {
        if let Some(inner) = p.strip_prefix(prefix).and_then(|r| r.strip_suffix('}')) {
            return inner.trim();
        }
    }
    p
}

/// Reads the critic's judgment. Without a boxed True/False the verdict
/// defaults to `yes`.
pub fn parse_verdict(text: &str) -> Verdict {
    for &(s, e) in boxed_spans(text).iter().rev() {
        let payload = strip_text_macro(&text[s..e]);
        let value = if payload.eq_ignore_ascii_case("true") {
            VerdictValue::Yes
        } else if payload.eq_ignore_ascii_case("false") {
            VerdictValue::No
        } else {
            continue;
        };
        return Verdict {
            value,
            raw: text[s..e].to_owned(),
            parse_quality: ParseQuality::Explicit,
        };
    }
    Verdict {
        value: VerdictValue::Yes,
        raw: String::new(),
        parse_quality: ParseQuality::Defaulted,
    }
}

/// The boxed rule if present, otherwise the whole trimmed reply.
pub fn parse_rule(text: &str) -> Result<RuleText, ExtractError> {
    match extract_boxed(text) {
        Some(payload) if !payload.trim().is_empty() => RuleText::new(payload),
        _ => RuleText::new(text),
    }
}
