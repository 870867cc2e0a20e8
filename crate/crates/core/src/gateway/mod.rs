//! Uniform interface to text/multimodal completion backends.
//!
//! All agents talk to the model through the [`Backend`] trait. Two
//! implementations ship with the crate: a deterministic [`ScriptedBackend`]
//! used by every test, and a reference [`HttpBackend`] for real runs.

mod http;
mod log;
mod scripted;

pub use http::{HttpBackend, HttpBackendConfig};
pub use log::{CallLogger, CallRecord, LoggingBackend};
pub use scripted::{ResponseScript, ScriptEntry, ScriptedBackend};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("response exceeds max_output_tokens ({limit}): estimated {estimated} tokens")]
    ResponseTooLong { estimated: u32, limit: u32 },
    #[error("response script exhausted at entry {cursor}")]
    ScriptExhausted { cursor: usize },
    #[error("script entry {cursor} expected last user message to contain {expected:?}")]
    MatchFailed { cursor: usize, expected: String },
    #[error("invalid message: {0}")]
    InvalidMessage(String),
    #[error("invalid transcript: {0}")]
    InvalidTranscript(String),
    #[error("invalid sampling params: {0}")]
    InvalidParams(String),
    #[error("script file error: {0}")]
    ScriptFile(String),
    #[error("call log error: {0}")]
    CallLog(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// One raster image attached to a message, e.g. a rendered report page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImagePart {
    #[serde(with = "base64_bytes")]
    pub bytes: Vec<u8>,
    pub width: u32,
    pub height: u32,
    /// Format tag, e.g. "png".
    pub format: String,
}

impl ImagePart {
    pub fn new(bytes: Vec<u8>, width: u32, height: u32, format: &str) -> Result<Self, GatewayError> {
        if width == 0 || height == 0 {
            return Err(GatewayError::InvalidMessage(
                "image dimensions must be positive".into(),
            ));
        }
        Ok(Self { bytes, width, height, format: format.to_string() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Part {
    Text { text: String },
    Image(ImagePart),
}

impl Part {
    pub fn text(s: impl Into<String>) -> Self {
        Part::Text { text: s.into() }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Part::Text { text } => Some(text),
            Part::Image(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub parts: Vec<Part>,
}

impl Message {
    pub fn new(role: Role, parts: Vec<Part>) -> Result<Self, GatewayError> {
        if parts.is_empty() {
            return Err(GatewayError::InvalidMessage("message needs at least one part".into()));
        }
        Ok(Self { role, parts })
    }

    pub fn text(role: Role, text: impl Into<String>) -> Self {
        Self { role, parts: vec![Part::text(text)] }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Self::text(Role::System, text)
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self::text(Role::User, text)
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self::text(Role::Assistant, text)
    }

    /// Concatenation of all text parts.
    pub fn joined_text(&self) -> String {
        self.parts
            .iter()
            .filter_map(Part::as_text)
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn image_count(&self) -> usize {
        self.parts.iter().filter(|p| matches!(p, Part::Image(_))).count()
    }
}

/// Ordered conversation owned by a single agent session.
///
/// At most one leading system message; after it, an assistant message must
/// follow a user message, while user messages may be appended back to back.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChatTranscript {
    messages: Vec<Message>,
}

impl ChatTranscript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, msg: Message) -> Result<(), GatewayError> {
        match msg.role {
            Role::System => {
                if !self.messages.is_empty() {
                    return Err(GatewayError::InvalidTranscript(
                        "system message only allowed in leading position".into(),
                    ));
                }
            }
            Role::Assistant => {
                let prev = self.messages.iter().rev().find(|m| m.role != Role::System);
                if !matches!(prev, Some(m) if m.role == Role::User) {
                    return Err(GatewayError::InvalidTranscript(
                        "assistant message must follow a user message".into(),
                    ));
                }
            }
            Role::User => {}
        }
        self.messages.push(msg);
        Ok(())
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn last_user_text(&self) -> Option<String> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(Message::joined_text)
    }

    /// SHA-256 over the canonical JSON form, hex encoded.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(&self.messages).expect("transcript serializes");
        let digest = Sha256::digest(&json);
        hex_encode(&digest)
    }
}

pub(crate) fn hex_encode(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Sampling configuration for one completion call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 4096;

impl SamplingParams {
    pub fn new(temperature: f64, max_output_tokens: u32) -> Result<Self, GatewayError> {
        if !(0.0..=2.0).contains(&temperature) {
            return Err(GatewayError::InvalidParams(format!(
                "temperature {temperature} outside [0, 2]"
            )));
        }
        if max_output_tokens == 0 {
            return Err(GatewayError::InvalidParams("max_output_tokens must be positive".into()));
        }
        Ok(Self { temperature, max_output_tokens })
    }

    /// Default used for report generation.
    pub fn generation() -> Self {
        Self { temperature: 0.8, max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS }
    }

    /// Default used for reviewing and scoring.
    pub fn review() -> Self {
        Self { temperature: 0.1, max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS }
    }
}

/// A completion backend. Shareable across concurrent sessions.
pub trait Backend: Send + Sync {
    fn complete(
        &self,
        transcript: &ChatTranscript,
        params: &SamplingParams,
    ) -> Result<Message, GatewayError>;

    fn name(&self) -> &str {
        "backend"
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(
        &self,
        transcript: &ChatTranscript,
        params: &SamplingParams,
    ) -> Result<Message, GatewayError> {
        (**self).complete(transcript, params)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn complete(
        &self,
        transcript: &ChatTranscript,
        params: &SamplingParams,
    ) -> Result<Message, GatewayError> {
        (**self).complete(transcript, params)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

/// Best-effort token estimate used only for the response-too-long check and
/// run reports; roughly four characters per token.
pub fn estimate_tokens(text: &str) -> u32 {
    (text.chars().count() as u32).div_ceil(4)
}

/// Run one completion against `backend`, enforcing the output-length limit.
/// The transcript is never mutated; the caller owns history growth.
pub fn complete(
    transcript: &ChatTranscript,
    params: &SamplingParams,
    backend: &dyn Backend,
) -> Result<Message, GatewayError> {
    if transcript.is_empty() {
        return Err(GatewayError::InvalidTranscript("transcript is empty".into()));
    }
    let reply = backend.complete(transcript, params)?;
    let estimated = estimate_tokens(&reply.joined_text());
    if estimated > params.max_output_tokens {
        return Err(GatewayError::ResponseTooLong { estimated, limit: params.max_output_tokens });
    }
    Ok(reply)
}

mod base64_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    const ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

    pub fn encode(data: &[u8]) -> String {
        let mut out = String::with_capacity(data.len().div_ceil(3) * 4);
        for chunk in data.chunks(3) {
            let b = [chunk[0], *chunk.get(1).unwrap_or(&0), *chunk.get(2).unwrap_or(&0)];
            let n = (u32::from(b[0]) << 16) | (u32::from(b[1]) << 8) | u32::from(b[2]);
            out.push(ALPHABET[(n >> 18) as usize & 63] as char);
            out.push(ALPHABET[(n >> 12) as usize & 63] as char);
            out.push(if chunk.len() > 1 { ALPHABET[(n >> 6) as usize & 63] as char } else { '=' });
            out.push(if chunk.len() > 2 { ALPHABET[n as usize & 63] as char } else { '=' });
        }
        out
    }

    pub fn decode(s: &str) -> Result<Vec<u8>, String> {
        let mut out = Vec::with_capacity(s.len() / 4 * 3);
        let mut buf = 0u32;
        let mut bits = 0u32;
        for c in s.bytes() {
            if c == b'=' || c == b'\n' || c == b'\r' {
                continue;
            }
            let v = ALPHABET
                .iter()
                .position(|&a| a == c)
                .ok_or_else(|| format!("invalid base64 byte {c:#x}"))? as u32;
            buf = (buf << 6) | v;
            bits += 6;
            if bits >= 8 {
                bits -= 8;
                out.push((buf >> bits) as u8);
            }
        }
        Ok(out)
    }

    pub fn serialize<S: Serializer>(data: &[u8], ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&encode(data))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(de)?;
        decode(&s).map_err(serde::de::Error::custom)
    }
}

pub use base64_bytes::encode as base64_encode;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn message_requires_parts() {
        assert!(Message::new(Role::User, vec![]).is_err());
    }

    #[test]
    fn image_part_rejects_zero_dimensions() {
        assert!(ImagePart::new(vec![1], 0, 10, "png").is_err());
        assert!(ImagePart::new(vec![1], 10, 0, "png").is_err());
        assert!(ImagePart::new(vec![1], 10, 10, "png").is_ok());
    }

    #[test]
    fn transcript_rejects_mid_stream_system() {
        let mut t = ChatTranscript::new();
        t.push(Message::user("hi")).unwrap();
        assert!(t.push(Message::system("late")).is_err());
    }

    #[test]
    fn transcript_allows_user_after_user() {
        let mut t = ChatTranscript::new();
        t.push(Message::system("sys")).unwrap();
        t.push(Message::user("a")).unwrap();
        t.push(Message::user("b")).unwrap();
        t.push(Message::assistant("c")).unwrap();
        assert!(t.push(Message::assistant("d")).is_err());
    }

    #[test]
    fn transcript_rejects_leading_assistant() {
        let mut t = ChatTranscript::new();
        assert!(t.push(Message::assistant("hello")).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(SamplingParams::new(2.5, 10).is_err());
        assert!(SamplingParams::new(0.5, 0).is_err());
        assert_eq!(SamplingParams::generation().temperature, 0.8);
        assert_eq!(SamplingParams::review().temperature, 0.1);
    }

    #[test]
    fn complete_rejects_empty_transcript() {
        let backend = ScriptedBackend::from_texts(["hello"]);
        let err = complete(&ChatTranscript::new(), &SamplingParams::generation(), &backend);
        assert!(matches!(err, Err(GatewayError::InvalidTranscript(_))));
    }

    #[test]
    fn complete_enforces_response_length() {
        let long = "x".repeat(100);
        let backend = ScriptedBackend::from_texts([long.as_str()]);
        let mut t = ChatTranscript::new();
        t.push(Message::user("go")).unwrap();
        let params = SamplingParams::new(0.8, 10).unwrap();
        let err = complete(&t, &params, &backend);
        assert!(matches!(err, Err(GatewayError::ResponseTooLong { .. })));
    }

    #[test]
    fn base64_round_trip() {
        for data in [&b""[..], b"a", b"ab", b"abc", b"abcd", &[0u8, 255, 7, 9]] {
            let enc = base64_bytes::encode(data);
            assert_eq!(base64_bytes::decode(&enc).unwrap(), data);
        }
    }
}
