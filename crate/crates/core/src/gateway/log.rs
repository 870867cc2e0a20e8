//! Call logging and replay.
//!
//! Every completion is journaled as one JSONL record with the sampling
//! params, a transcript hash and the full response text. Replaying a log
//! reproduces the run: when a [`LoggingBackend`] is opened over an existing
//! log, calls whose transcript hash matches the journaled one are answered
//! from the log instead of hitting the inner backend, which is what makes
//! resumed runs skip completed steps.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{hex_encode, Backend, ChatTranscript, GatewayError, Message, SamplingParams};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CallRecord {
    pub index: usize,
    pub params: SamplingParams,
    pub transcript_sha256: String,
    pub response_sha256: String,
    pub response_text: String,
}

/// Append-only JSONL call log.
pub struct CallLogger {
    path: PathBuf,
}

impl CallLogger {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn append(&self, record: &CallRecord) -> Result<(), GatewayError> {
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| GatewayError::CallLog(format!("{}: {e}", self.path.display())))?;
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(file, "{line}")
            .map_err(|e| GatewayError::CallLog(format!("{}: {e}", self.path.display())))
    }

    pub fn load(path: &Path) -> Result<Vec<CallRecord>, GatewayError> {
        if !path.exists() {
            return Ok(Vec::new());
        }
        let raw = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::CallLog(format!("{}: {e}", path.display())))?;
        let mut records = Vec::new();
        for (lineno, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: CallRecord = serde_json::from_str(line).map_err(|e| {
                GatewayError::CallLog(format!("{} line {}: {e}", path.display(), lineno + 1))
            })?;
            records.push(rec);
        }
        Ok(records)
    }
}

fn sha256_hex(data: &[u8]) -> String {
    hex_encode(&Sha256::digest(data))
}

/// Wraps a backend with journaling plus replay of already-journaled calls.
pub struct LoggingBackend<B> {
    inner: B,
    logger: CallLogger,
    state: Mutex<LogState>,
}

struct LogState {
    prior: Vec<CallRecord>,
    next_index: usize,
}

impl<B: Backend> LoggingBackend<B> {
    /// Open over `log_path`; existing records are used for replay.
    pub fn open(inner: B, log_path: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let path = log_path.into();
        let prior = CallLogger::load(&path)?;
        Ok(Self {
            inner,
            logger: CallLogger::new(path),
            state: Mutex::new(LogState { prior, next_index: 0 }),
        })
    }

    pub fn calls_made(&self) -> usize {
        self.state.lock().unwrap().next_index
    }
}

impl<B: Backend> Backend for LoggingBackend<B> {
    fn complete(
        &self,
        transcript: &ChatTranscript,
        params: &SamplingParams,
    ) -> Result<Message, GatewayError> {
        let mut state = self.state.lock().unwrap();
        let index = state.next_index;
        let transcript_hash = transcript.content_hash();

        if let Some(rec) = state.prior.get(index) {
            if rec.transcript_sha256 == transcript_hash {
                let text = rec.response_text.clone();
                state.next_index += 1;
                return Ok(Message::assistant(text));
            }
            // Divergence from the journal: fall through to the live backend
            // and stop replaying from here on.
            state.prior.truncate(index);
        }

        let reply = self.inner.complete(transcript, params)?;
        let text = reply.joined_text();
        self.logger.append(&CallRecord {
            index,
            params: params.clone(),
            transcript_sha256: transcript_hash,
            response_sha256: sha256_hex(text.as_bytes()),
            response_text: text,
        })?;
        state.next_index += 1;
        Ok(reply)
    }

    fn name(&self) -> &str {
        self.inner.name()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{complete, ScriptedBackend};

    fn t(text: &str) -> ChatTranscript {
        let mut tr = ChatTranscript::new();
        tr.push(Message::user(text)).unwrap();
        tr
    }

    #[test]
    fn logs_then_replays() {
        let dir = std::env::temp_dir().join(format!("calllog_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let log = dir.join("calls.jsonl");
        std::fs::remove_file(&log).ok();

        let p = SamplingParams::generation();
        {
            let backend =
                LoggingBackend::open(ScriptedBackend::from_texts(["one", "two"]), &log).unwrap();
            assert_eq!(complete(&t("a"), &p, &backend).unwrap().joined_text(), "one");
            assert_eq!(complete(&t("b"), &p, &backend).unwrap().joined_text(), "two");
        }
        // Resume with an exhausted inner backend: both calls must replay.
        {
            let backend =
                LoggingBackend::open(ScriptedBackend::from_texts([]), &log).unwrap();
            assert_eq!(complete(&t("a"), &p, &backend).unwrap().joined_text(), "one");
            assert_eq!(complete(&t("b"), &p, &backend).unwrap().joined_text(), "two");
        }
        // A diverging transcript stops replay and hits the live backend.
        {
            let backend =
                LoggingBackend::open(ScriptedBackend::from_texts(["fresh"]), &log).unwrap();
            assert_eq!(complete(&t("different"), &p, &backend).unwrap().joined_text(), "fresh");
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}
