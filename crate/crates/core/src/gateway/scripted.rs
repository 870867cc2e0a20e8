//! Deterministic scripted backend: replays canned responses in order.

use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, ChatTranscript, GatewayError, Message, SamplingParams};

/// One canned response, optionally guarded by a substring predicate on the
/// last user message. A failed match signals that the test fixture and the
/// pipeline have diverged.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(rename = "match", default, skip_serializing_if = "Option::is_none")]
    pub match_substring: Option<String>,
    #[serde(rename = "text")]
    pub response_text: String,
}

impl ScriptEntry {
    pub fn text(response_text: impl Into<String>) -> Self {
        Self { match_substring: None, response_text: response_text.into() }
    }

    pub fn matching(substring: impl Into<String>, response_text: impl Into<String>) -> Self {
        Self { match_substring: Some(substring.into()), response_text: response_text.into() }
    }
}

/// Ordered list of canned responses with a consumption cursor.
#[derive(Debug, Clone, Default)]
pub struct ResponseScript {
    entries: Vec<ScriptEntry>,
    cursor: usize,
}

impl ResponseScript {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        Self { entries, cursor: 0 }
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn remaining(&self) -> usize {
        self.entries.len() - self.cursor
    }

    /// Consume the next entry. The returned text is the entry's
    /// `response_text` byte for byte.
    pub fn next_scripted(&mut self, transcript: &ChatTranscript) -> Result<Message, GatewayError> {
        let entry = self
            .entries
            .get(self.cursor)
            .ok_or(GatewayError::ScriptExhausted { cursor: self.cursor })?;
        if let Some(expected) = &entry.match_substring {
            let last_user = transcript.last_user_text().unwrap_or_default();
            if !last_user.contains(expected.as_str()) {
                return Err(GatewayError::MatchFailed {
                    cursor: self.cursor,
                    expected: expected.clone(),
                });
            }
        }
        let msg = Message::assistant(entry.response_text.clone());
        self.cursor += 1;
        Ok(msg)
    }

    /// Load from a line-delimited script file: one JSON entry per line,
    /// blank lines and `#` comment lines ignored.
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::ScriptFile(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (lineno, line) in raw.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let entry: ScriptEntry = serde_json::from_str(line).map_err(|e| {
                GatewayError::ScriptFile(format!("{} line {}: {e}", path.display(), lineno + 1))
            })?;
            entries.push(entry);
        }
        Ok(Self::new(entries))
    }

    pub fn save(&self, path: &Path) -> Result<(), GatewayError> {
        let mut out = String::new();
        for entry in &self.entries {
            out.push_str(&serde_json::to_string(entry).expect("entry serializes"));
            out.push('\n');
        }
        std::fs::write(path, out)
            .map_err(|e| GatewayError::ScriptFile(format!("{}: {e}", path.display())))
    }
}

/// Backend that serves a [`ResponseScript`]. Cursor advancement is
/// serialized, so the backend can be shared across threads.
pub struct ScriptedBackend {
    script: Mutex<ResponseScript>,
}

impl ScriptedBackend {
    pub fn new(script: ResponseScript) -> Self {
        Self { script: Mutex::new(script) }
    }

    pub fn from_entries(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        Self::new(ResponseScript::new(entries.into_iter().collect()))
    }

    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        Self::from_entries(texts.into_iter().map(ScriptEntry::text))
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        Ok(Self::new(ResponseScript::load(path)?))
    }

    pub fn remaining(&self) -> usize {
        self.script.lock().unwrap().remaining()
    }
}

impl Backend for ScriptedBackend {
    fn complete(
        &self,
        transcript: &ChatTranscript,
        _params: &SamplingParams,
    ) -> Result<Message, GatewayError> {
        self.script.lock().unwrap().next_scripted(transcript)
    }

    fn name(&self) -> &str {
        "scripted"
    }
}
