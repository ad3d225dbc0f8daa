//! Modality-tagged prompt messages.
//!
//! A [`MessageSeq`] is what a backend receives. Each part is text or a PNG
//! image and remembers where it came from, so the ground-truth audit can
//! tell a templated instruction from a rendered example grid.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// Which grid of the task a matrix part renders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "role", content = "index")]
pub enum GridRole {
    ExampleInput(usize),
    ExampleOutput(usize),
    TestInput(usize),
    Prediction,
    PreviousPrediction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartOrigin {
    /// Fixed template wording, labels and legends.
    Template,
    Grid(GridRole),
    /// Text produced by a model earlier in the pipeline (rules, critiques).
    Model,
}

#[derive(Clone, PartialEq, Eq)]
pub struct PngImage {
    bytes: Arc<[u8]>,
    sha256: String,
}

impl PngImage {
    pub fn new(bytes: Vec<u8>) -> Self {
        let sha256 = sha256_hex(&bytes);
        Self {
            bytes: bytes.into(),
            sha256,
        }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn sha256(&self) -> &str {
        &self.sha256
    }
}

impl std::fmt::Debug for PngImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PngImage")
            .field("len", &self.bytes.len())
            .field("sha256", &self.sha256)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PartContent {
    Text(String),
    Image(PngImage),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessagePart {
    pub content: PartContent,
    pub origin: PartOrigin,
}

impl MessagePart {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            content: PartContent::Text(text.into()),
            origin: PartOrigin::Template,
        }
    }

    pub fn image(png: Vec<u8>) -> Self {
        Self {
            content: PartContent::Image(PngImage::new(png)),
            origin: PartOrigin::Template,
        }
    }

    pub fn with_origin(mut self, origin: PartOrigin) -> Self {
        self.origin = origin;
        self
    }

    pub fn as_text(&self) -> Option<&str> {
        match &self.content {
            PartContent::Text(t) => Some(t),
            PartContent::Image(_) => None,
        }
    }

    pub fn as_image(&self) -> Option<&PngImage> {
        match &self.content {
            PartContent::Image(i) => Some(i),
            PartContent::Text(_) => None,
        }
    }

    pub fn is_image(&self) -> bool {
        matches!(self.content, PartContent::Image(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub role: Role,
    pub parts: Vec<MessagePart>,
}

impl Message {
    pub fn user(parts: Vec<MessagePart>) -> Self {
        Self {
            role: Role::User,
            parts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MessageSeq {
    pub messages: Vec<Message>,
}

/// Content-only form of a message part: adjacent text is merged and images
/// are referenced by hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CanonicalPart {
    Text { text: String },
    Image { sha256: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalMessage {
    pub role: Role,
    pub parts: Vec<CanonicalPart>,
}

impl MessageSeq {
    pub fn single_user(parts: Vec<MessagePart>) -> Self {
        Self {
            messages: vec![Message::user(parts)],
        }
    }

    pub fn parts(&self) -> impl Iterator<Item = &MessagePart> {
        self.messages.iter().flat_map(|m| m.parts.iter())
    }

    pub fn image_count(&self) -> usize {
        self.parts().filter(|p| p.is_image()).count()
    }

    pub fn images(&self) -> impl Iterator<Item = &PngImage> {
        self.parts().filter_map(MessagePart::as_image)
    }

    /// All text, concatenated in order, with images elided.
    pub fn text(&self) -> String {
        self.parts().filter_map(MessagePart::as_text).collect()
    }

    pub fn canonical(&self) -> Vec<CanonicalMessage> {
        self.messages
            .iter()
            .map(|m| {
                let mut parts: Vec<CanonicalPart> = Vec::new();
                for part in &m.parts {
                    match &part.content {
                        PartContent::Text(t) if t.is_empty() => {}
                        PartContent::Text(t) => match parts.last_mut() {
                            Some(CanonicalPart::Text { text }) => text.push_str(t),
                            _ => parts.push(CanonicalPart::Text { text: t.clone() }),
                        },
                        PartContent::Image(img) => parts.push(CanonicalPart::Image {
                            sha256: img.sha256.clone(),
                        }),
                    }
                }
                CanonicalMessage {
                    role: m.role,
                    parts,
                }
            })
            .collect()
    }
}
