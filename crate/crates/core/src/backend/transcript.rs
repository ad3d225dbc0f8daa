use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    request_digest, Backend, BackendError, BackendIdentity, BackendKind, ModelRequest,
    ModelResponse,
};
use crate::message::{CanonicalMessage, CanonicalPart, PartContent, PartOrigin, Role};

pub const TRANSCRIPT_FILE: &str = "transcript.jsonl";
pub const BLOB_DIR: &str = "blobs";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RecordedPart {
    Text { text: String, origin: PartOrigin },
    Image { sha256: String, origin: PartOrigin },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedMessage {
    pub role: Role,
    pub parts: Vec<RecordedPart>,
}

/// A request as persisted: images are replaced by their blob hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedRequest {
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub request_tag: String,
    pub messages: Vec<RecordedMessage>,
}

impl RecordedRequest {
    fn from_request(req: &ModelRequest) -> Self {
        let messages = req
            .messages
            .messages
            .iter()
            .map(|m| RecordedMessage {
                role: m.role,
                parts: m
                    .parts
                    .iter()
                    .map(|p| match &p.content {
                        PartContent::Text(t) => RecordedPart::Text {
                            text: t.clone(),
                            origin: p.origin,
                        },
                        PartContent::Image(img) => RecordedPart::Image {
                            sha256: img.sha256().to_owned(),
                            origin: p.origin,
                        },
                    })
                    .collect(),
            })
            .collect();
        Self {
            model_id: req.model_id.clone(),
            temperature: req.temperature,
            max_output_tokens: req.max_output_tokens,
            request_tag: req.request_tag.clone(),
            messages,
        }
    }

    fn canonical(&self) -> Vec<CanonicalMessage> {
        self.messages
            .iter()
            .map(|m| {
                let mut parts: Vec<CanonicalPart> = Vec::new();
                for p in &m.parts {
                    match p {
                        RecordedPart::Text { text, .. } if text.is_empty() => {}
                        RecordedPart::Text { text: t, .. } => match parts.last_mut() {
                            Some(CanonicalPart::Text { text }) => text.push_str(t),
                            _ => parts.push(CanonicalPart::Text { text: t.clone() }),
                        },
                        RecordedPart::Image { sha256, .. } => parts.push(CanonicalPart::Image {
                            sha256: sha256.clone(),
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

    /// Recomputes the request digest from the stored content.
    pub fn digest(&self) -> String {
        request_digest(&self.model_id, self.canonical(), self.temperature)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub seq: u64,
    pub digest: String,
    pub request: RecordedRequest,
    pub response: ModelResponse,
    pub timestamp: String,
}

struct Writer {
    file: File,
    next_seq: u64,
}

/// Append-only transcript on disk: `transcript.jsonl` plus `blobs/<sha>.png`.
pub struct TranscriptStore {
    dir: PathBuf,
    writer: Mutex<Writer>,
}

fn storage(path: &Path, e: impl std::fmt::Display) -> BackendError {
    BackendError::Storage(format!("{}: {e}", path.display()))
}

impl TranscriptStore {
    /// Opens (creating if needed) a store rooted at `dir`. Existing entries
    /// are kept and new ones appended after them.
    pub fn open(dir: &Path) -> Result<Self, BackendError> {
        let blobs = dir.join(BLOB_DIR);
        fs::create_dir_all(&blobs).map_err(|e| storage(&blobs, e))?;
        let path = dir.join(TRANSCRIPT_FILE);
        let next_seq = if path.exists() {
            read_transcript(&path)?.len() as u64
        } else {
            0
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| storage(&path, e))?;
        Ok(Self {
            dir: dir.to_owned(),
            writer: Mutex::new(Writer { file, next_seq }),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn transcript_path(&self) -> PathBuf {
        self.dir.join(TRANSCRIPT_FILE)
    }

    pub fn len(&self) -> u64 {
        self.writer.lock().expect("transcript lock").next_seq
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn append(&self, req: &ModelRequest, resp: &ModelResponse) -> Result<TranscriptEntry, BackendError> {
        for img in req.messages.images() {
            let path = self.dir.join(BLOB_DIR).join(format!("{}.png", img.sha256()));
            if !path.exists() {
                fs::write(&path, img.bytes()).map_err(|e| storage(&path, e))?;
            }
        }
        let mut w = self.writer.lock().expect("transcript lock");
        let entry = TranscriptEntry {
            seq: w.next_seq,
            digest: req.digest(),
            request: RecordedRequest::from_request(req),
            response: resp.clone(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        };
        let mut line = serde_json::to_vec(&entry).map_err(|e| storage(&self.dir, e))?;
        line.push(b'\n');
        let path = self.transcript_path();
        w.file.write_all(&line).map_err(|e| storage(&path, e))?;
        w.file.flush().map_err(|e| storage(&path, e))?;
        w.next_seq += 1;
        Ok(entry)
    }
}

/// Reads a transcript from a `.jsonl` file or a store directory.
pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptEntry>, BackendError> {
    let file_path = if path.is_dir() {
        path.join(TRANSCRIPT_FILE)
    } else {
        path.to_owned()
    };
    let file = File::open(&file_path).map_err(|e| storage(&file_path, e))?;
    let mut entries = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| storage(&file_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: TranscriptEntry = serde_json::from_str(&line)
            .map_err(|e| storage(&file_path, format!("line {}: {e}", n + 1)))?;
        entries.push(entry);
    }
    Ok(entries)
}

/// Pass-through backend that persists every successful call.
pub struct RecordingBackend<B> {
    inner: B,
    store: TranscriptStore,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B, store: TranscriptStore) -> Self {
        Self { inner, store }
    }

    pub fn store(&self) -> &TranscriptStore {
        &self.store
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, BackendError> {
        let resp = self.inner.complete(req)?;
        self.store.append(req, &resp)?;
        Ok(resp)
    }

    fn identity(&self) -> BackendIdentity {
        self.inner.identity()
    }
}

/// Answers strictly from a recorded transcript; never touches the network.
pub struct ReplayBackend {
    entries: Vec<TranscriptEntry>,
    by_digest: HashMap<String, Vec<usize>>,
    used: Mutex<Vec<bool>>,
    source: String,
}

impl ReplayBackend {
    pub fn open(path: &Path) -> Result<Self, BackendError> {
        let entries = read_transcript(path)?;
        Ok(Self::from_entries(entries).with_source(path.display().to_string()))
    }

    pub fn from_entries(entries: Vec<TranscriptEntry>) -> Self {
        let mut by_digest: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            by_digest.entry(e.digest.clone()).or_default().push(i);
        }
        let used = Mutex::new(vec![false; entries.len()]);
        Self {
            entries,
            by_digest,
            used,
            source: String::new(),
        }
    }

    fn with_source(mut self, source: String) -> Self {
        self.source = source;
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Backend for ReplayBackend {
    fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, BackendError> {
        let digest = req.digest();
        let miss = || BackendError::ReplayMiss {
            digest: digest.clone(),
            tag: req.request_tag.clone(),
        };
        let candidates = self.by_digest.get(&digest).ok_or_else(miss)?;
        let mut used = self.used.lock().expect("replay lock");
        let same_tag: Vec<usize> = candidates
            .iter()
            .copied()
            .filter(|&i| self.entries[i].request.request_tag == req.request_tag)
            .collect();
        // Prefer an unused entry with the same tag, then any unused entry
        // with the same content; re-asked requests reuse the first match.
        let pick = same_tag
            .iter()
            .chain(candidates.iter())
            .copied()
            .find(|&i| !used[i])
            .or_else(|| same_tag.first().copied())
            .unwrap_or(candidates[0]);
        used[pick] = true;
        let mut resp = self.entries[pick].response.clone();
        resp.backend_kind = BackendKind::Replay;
        Ok(resp)
    }

    fn identity(&self) -> BackendIdentity {
        BackendIdentity {
            kind: BackendKind::Replay,
            endpoint: None,
            detail: Some(format!("{} entries", self.entries.len())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedBackend;
    use crate::message::{MessagePart, MessageSeq};

    fn req(tag: &str, body: &str) -> ModelRequest {
        ModelRequest::new(
            "m",
            MessageSeq::single_user(vec![MessagePart::text(body), MessagePart::image(vec![1, 2])]),
            tag,
        )
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let rec = RecordingBackend::new(
            ScriptedBackend::queue(["one", "two", "three"]),
            TranscriptStore::open(dir.path()).unwrap(),
        );
        let reqs = [req("a/summarize", "x"), req("b/summarize", "y"), req("c/summarize", "z")];
        let recorded: Vec<String> = reqs.iter().map(|r| rec.complete(r).unwrap().text).collect();
        let entries = read_transcript(dir.path()).unwrap();
        assert_eq!(entries.len(), 3);
        assert_eq!(rec.store().len(), 3);
        for e in &entries {
            assert_eq!(e.digest, e.request.digest());
        }
        let blob = dir.path().join(BLOB_DIR).join(format!(
            "{}.png",
            crate::message::sha256_hex(&[1, 2])
        ));
        assert!(blob.exists());

        let replay = ReplayBackend::open(dir.path()).unwrap();
        for (r, text) in reqs.iter().zip(&recorded) {
            let resp = replay.complete(r).unwrap();
            assert_eq!(&resp.text, text);
            assert_eq!(resp.backend_kind, BackendKind::Replay);
        }
        assert!(matches!(
            replay.complete(&req("d/summarize", "unseen")),
            Err(BackendError::ReplayMiss { .. })
        ));
    }

    #[test]
    fn duplicate_content_resolved_by_tag() {
        let dir = tempfile::tempdir().unwrap();
        let rec = RecordingBackend::new(
            ScriptedBackend::queue(["first", "second"]),
            TranscriptStore::open(dir.path()).unwrap(),
        );
        rec.complete(&req("t/t0/apply/r1", "same")).unwrap();
        rec.complete(&req("t/t0/apply/r2", "same")).unwrap();
        let replay = ReplayBackend::open(&dir.path().join(TRANSCRIPT_FILE)).unwrap();
        assert_eq!(replay.complete(&req("t/t0/apply/r2", "same")).unwrap().text, "second");
        assert_eq!(replay.complete(&req("t/t0/apply/r1", "same")).unwrap().text, "first");
        assert_eq!(replay.complete(&req("t/t0/apply/r1", "same")).unwrap().text, "first");
    }

    #[test]
    fn reopening_appends() {
        let dir = tempfile::tempdir().unwrap();
        {
            let rec = RecordingBackend::new(
                ScriptedBackend::queue(["a"]),
                TranscriptStore::open(dir.path()).unwrap(),
            );
            rec.complete(&req("x/summarize", "1")).unwrap();
        }
        let store = TranscriptStore::open(dir.path()).unwrap();
        assert_eq!(store.len(), 1);
        let rec = RecordingBackend::new(ScriptedBackend::queue(["b"]), store);
        rec.complete(&req("y/summarize", "2")).unwrap();
        let entries = read_transcript(dir.path()).unwrap();
        assert_eq!(entries.iter().map(|e| e.seq).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn unwritable_store_is_storage_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("occupied");
        std::fs::write(&file, "x").unwrap();
        assert!(matches!(
            TranscriptStore::open(&file.join("store")),
            Err(BackendError::Storage(_))
        ));
    }
}
