//! Reviewer agent: scores rendered report pages on clarity and layout,
//! produces textual feedback, and decides when the writer loop stops.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    complete, Backend, ChatTranscript, GatewayError, ImagePart, Message, Part, Role,
    SamplingParams,
};
use crate::researcher::fenced_blocks;
use crate::templates::{fill, TemplateError, TemplateId, TemplateStore};

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("no fenced score block in reply")]
    MissingBlock,
    #[error("score block is missing key {0:?}")]
    MissingKey(&'static str),
    #[error("score {0:?} is not an integer")]
    NonInteger(&'static str),
    #[error("score {key:?} = {value} outside [1, 10]")]
    OutOfRange { key: &'static str, value: i64 },
    #[error("score block is not valid JSON: {0}")]
    InvalidJson(String),
    #[error("no report pages to review")]
    NoPages,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// One round of reviewer feedback.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewFeedback {
    pub text: String,
    pub clarity: u8,
    pub layout: u8,
    pub round: usize,
}

impl ReviewFeedback {
    pub fn new(text: impl Into<String>, clarity: u8, layout: u8, round: usize) -> Option<Self> {
        ((1..=10).contains(&clarity) && (1..=10).contains(&layout))
            .then(|| Self { text: text.into(), clarity, layout, round })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminationPolicy {
    pub max_rounds: usize,
    pub perfect_score: u8,
}

impl Default for TerminationPolicy {
    fn default() -> Self {
        Self { max_rounds: 4, perfect_score: 10 }
    }
}

impl TerminationPolicy {
    pub fn new(max_rounds: usize, perfect_score: u8) -> Option<Self> {
        (max_rounds >= 1).then_some(Self { max_rounds, perfect_score })
    }
}

fn read_score(obj: &serde_json::Value, key: &'static str) -> Result<u8, ReviewError> {
    let value = obj.get(key).ok_or(ReviewError::MissingKey(key))?;
    let n = match value {
        serde_json::Value::Number(n) => {
            n.as_i64().ok_or(ReviewError::NonInteger(key))?
        }
        _ => return Err(ReviewError::NonInteger(key)),
    };
    if !(1..=10).contains(&n) {
        return Err(ReviewError::OutOfRange { key, value: n });
    }
    Ok(n as u8)
}

/// Parse `(clarity, layout)` from the LAST fenced block that mentions the
/// score keys. Every reply yields either in-range integers or a typed
/// error — never a silent default.
pub fn parse_scores(reply_text: &str) -> Result<(u8, u8), ReviewError> {
    let blocks = fenced_blocks(reply_text);
    if blocks.is_empty() {
        return Err(ReviewError::MissingBlock);
    }
    let candidate = blocks
        .iter()
        .rev()
        .find(|b| b.contains("clarity") || b.contains("layout"))
        .ok_or(ReviewError::MissingBlock)?;
    // The opening fence tag ("json") has already been stripped with the fence.
    let body = candidate.trim().trim_start_matches("json").trim();
    let obj: serde_json::Value =
        serde_json::from_str(body).map_err(|e| ReviewError::InvalidJson(e.to_string()))?;
    Ok((read_score(&obj, "clarity")?, read_score(&obj, "layout")?))
}

/// Review the current report pages given the full prior review/response
/// history. `prior` holds, per earlier round, the feedback and the writer's
/// response that accompanied the next submission.
pub fn review(
    pages: &[ImagePart],
    prior: &[(ReviewFeedback, String)],
    backend: &dyn Backend,
    store: &TemplateStore,
) -> Result<ReviewFeedback, ReviewError> {
    if pages.is_empty() {
        return Err(ReviewError::NoPages);
    }
    let round = prior.len();
    let params = SamplingParams::review();
    let mut transcript = ChatTranscript::new();
    transcript.push(Message::system(store.text(TemplateId::ReviewerSystem)?))?;

    let initial = store.text(TemplateId::ReviewerInitial)?;
    let with_pages = |text: String| -> Result<Message, GatewayError> {
        let mut parts = vec![Part::text(text)];
        parts.extend(pages.iter().cloned().map(Part::Image));
        Message::new(Role::User, parts)
    };

    if prior.is_empty() {
        transcript.push(with_pages(initial)?)?;
    } else {
        transcript.push(Message::user(initial))?;
        for (i, (feedback, response)) in prior.iter().enumerate() {
            transcript.push(Message::assistant(feedback.text.clone()))?;
            let later =
                fill(&store.text(TemplateId::ReviewerLater)?, &[("RESPONSE", response.as_str())])?;
            if i + 1 == prior.len() {
                transcript.push(with_pages(later)?)?;
            } else {
                transcript.push(Message::user(later))?;
            }
        }
    }

    let reply = complete(&transcript, &params, backend)?;
    let text = reply.joined_text();
    match parse_scores(&text) {
        Ok((clarity, layout)) => Ok(ReviewFeedback { text, clarity, layout, round }),
        Err(first) => {
            transcript.push(reply)?;
            transcript.push(Message::user(format!(
                "Your scores could not be parsed: {first}. Re-send the full review, ending \
                 with the fenced JSON score block in the required format."
            )))?;
            let retry = complete(&transcript, &params, backend)?;
            let retry_text = retry.joined_text();
            let (clarity, layout) = parse_scores(&retry_text)?;
            Ok(ReviewFeedback { text: retry_text, clarity, layout, round })
        }
    }
}

/// True iff the feedback is perfect on both axes or the round cap is hit.
pub fn should_terminate(f: &ReviewFeedback, policy: &TerminationPolicy) -> bool {
    (f.clarity == policy.perfect_score && f.layout == policy.perfect_score)
        || f.round + 1 >= policy.max_rounds
}
