//! Evaluation machinery: individual six-criterion scoring, pairwise
//! comparisons, N×N×K tournaments with two-stage aggregation, round-vs-round
//! comparison, best-of-N selection, and Pearson agreement statistics.

mod pearson;
mod tournament;

pub use pearson::{pearson, pearson_with_p, PearsonError};
pub use tournament::{
    argmax, compare_rounds, run_tournament, select_best, ComparisonTensor, OrderPolicy,
    TournamentScores,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    complete, Backend, ChatTranscript, GatewayError, ImagePart, Message, Part, Role,
    SamplingParams,
};
use crate::researcher::fenced_blocks;
use crate::templates::{fill, TemplateError, TemplateId, TemplateStore};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no fenced score block in reply")]
    MissingBlock,
    #[error("score block is missing the {0} criterion")]
    MissingKey(&'static str),
    #[error("score for {0} is not an integer")]
    NonInteger(&'static str),
    #[error("score for {key} = {value} outside [1, 10]")]
    OutOfRange { key: &'static str, value: i64 },
    #[error("score block is not valid JSON: {0}")]
    InvalidJson(String),
    #[error("need at least two reports, got {0}")]
    TooFewReports(usize),
    #[error("repetition count must be at least 1")]
    ZeroRepetitions,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// The Table-2-style rubric. `overall` is an independent judgement, not a
/// derived aggregate of the other five.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriteriaScores {
    pub non_triviality: u8,
    pub justification: u8,
    pub clarity: u8,
    pub feasibility: u8,
    pub balance: u8,
    pub overall: u8,
}

const CRITERIA: [&str; 6] =
    ["non_triviality", "justification", "clarity", "feasibility", "balance", "overall"];

/// Parse the six-key questionnaire block. Keys are long rubric statements,
/// so they are mapped positionally (insertion order) onto the rubric.
pub fn parse_criteria(reply: &str) -> Result<CriteriaScores, EvalError> {
    let blocks = fenced_blocks(reply);
    let candidate = blocks
        .iter()
        .rev()
        .find(|b| b.contains(':'))
        .ok_or(EvalError::MissingBlock)?;
    let body = candidate.trim().trim_start_matches("json").trim();
    let obj: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(body).map_err(|e| EvalError::InvalidJson(e.to_string()))?;
    let mut values = [0u8; 6];
    let mut entries = obj.values();
    for (slot, name) in values.iter_mut().zip(CRITERIA) {
        let value = entries.next().ok_or(EvalError::MissingKey(name))?;
        let n = value.as_i64().ok_or(EvalError::NonInteger(name))?;
        if !(1..=10).contains(&n) {
            return Err(EvalError::OutOfRange { key: name, value: n });
        }
        *slot = n as u8;
    }
    Ok(CriteriaScores {
        non_triviality: values[0],
        justification: values[1],
        clarity: values[2],
        feasibility: values[3],
        balance: values[4],
        overall: values[5],
    })
}

fn message_with_pages(text: String, pages: &[ImagePart]) -> Result<Message, GatewayError> {
    let mut parts = vec![Part::text(text)];
    parts.extend(pages.iter().cloned().map(Part::Image));
    Message::new(Role::User, parts)
}

/// Score one report against the six-criterion rubric.
pub fn score_individual(
    pages: &[ImagePart],
    creators_prompt: &str,
    research_history_text: &str,
    backend: &dyn Backend,
    store: &TemplateStore,
) -> Result<CriteriaScores, EvalError> {
    let params = SamplingParams::review();
    let prompt = fill(
        &store.text(TemplateId::EvalIndividual)?,
        &[
            ("CREATORS_PROMPT", creators_prompt),
            ("CONSULTANTS_REPORT", research_history_text),
        ],
    )?;
    let mut transcript = ChatTranscript::new();
    transcript.push(message_with_pages(prompt, pages)?)?;
    let reply = complete(&transcript, &params, backend)?;
    let text = reply.joined_text();
    match parse_criteria(&text) {
        Ok(scores) => Ok(scores),
        Err(first) => {
            transcript.push(reply)?;
            transcript.push(Message::user(format!(
                "Your questionnaire could not be parsed: {first}. Re-send the fenced JSON \
                 block with all six integer answers."
            )))?;
            let retry = complete(&transcript, &params, backend)?;
            parse_criteria(&retry.joined_text())
        }
    }
}

/// Outcome of one judged pair, from report A's perspective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairOutcome {
    /// +1 → REPORT_A wins, −1 → REPORT_B wins, 0 → draw.
    pub value: i8,
    /// True when the judge reply never parsed and 0 was recorded by policy.
    pub flagged: bool,
}

fn parse_winner(reply: &str) -> Option<i8> {
    let blocks = fenced_blocks(reply);
    let candidate = blocks.iter().rev().find(|b| b.contains("winner"))?;
    let body = candidate.trim().trim_start_matches("json").trim();
    let obj: serde_json::Value = serde_json::from_str(body).ok()?;
    match obj.get("winner")?.as_str()? {
        "REPORT_A" => Some(1),
        "REPORT_B" => Some(-1),
        "DRAW" => Some(0),
        _ => None,
    }
}

/// Judge two reports presented as tagged page-image sequences. An
/// unparseable winner after one retry is recorded as a flagged draw so a
/// broken judge cannot deadlock a tournament.
pub fn compare_pair(
    pages_a: &[ImagePart],
    pages_b: &[ImagePart],
    creators_prompt: &str,
    backend: &dyn Backend,
    store: &TemplateStore,
) -> Result<PairOutcome, EvalError> {
    let params = SamplingParams::review();
    let prompt =
        fill(&store.text(TemplateId::EvalPairwise)?, &[("CREATORS_PROMPT", creators_prompt)])?;
    let mut parts = vec![Part::text(prompt), Part::text("<REPORT_A>")];
    parts.extend(pages_a.iter().cloned().map(Part::Image));
    parts.push(Part::text("</REPORT_A>"));
    parts.push(Part::text("<REPORT_B>"));
    parts.extend(pages_b.iter().cloned().map(Part::Image));
    parts.push(Part::text("</REPORT_B>"));
    let mut transcript = ChatTranscript::new();
    transcript.push(Message::new(Role::User, parts)?)?;

    let reply = complete(&transcript, &params, backend)?;
    let text = reply.joined_text();
    if let Some(value) = parse_winner(&text) {
        return Ok(PairOutcome { value, flagged: false });
    }
    transcript.push(reply)?;
    transcript.push(Message::user(
        "Your verdict could not be parsed. Finish with the fenced JSON block \
         {\"winner\": \"REPORT_A\" OR \"REPORT_B\" OR \"DRAW\"}."
            .to_string(),
    ))?;
    let retry = complete(&transcript, &params, backend)?;
    match parse_winner(&retry.joined_text()) {
        Some(value) => Ok(PairOutcome { value, flagged: false }),
        None => Ok(PairOutcome { value: 0, flagged: true }),
    }
}

/// Deterministic rule-based judge for offline tests: prefers the report
/// whose pages carry more total image bytes; equal sizes are a draw.
pub struct ContentLengthJudge;

impl Backend for ContentLengthJudge {
    fn complete(
        &self,
        transcript: &ChatTranscript,
        _params: &SamplingParams,
    ) -> Result<Message, GatewayError> {
        let last = transcript
            .messages()
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .ok_or_else(|| GatewayError::InvalidTranscript("no user message".into()))?;
        let mut side_a = 0usize;
        let mut side_b = 0usize;
        let mut in_a = false;
        let mut in_b = false;
        for part in &last.parts {
            match part {
                Part::Text { text } => {
                    if text.contains("<REPORT_A>") {
                        in_a = true;
                    }
                    if text.contains("</REPORT_A>") {
                        in_a = false;
                    }
                    if text.contains("<REPORT_B>") {
                        in_b = true;
                    }
                    if text.contains("</REPORT_B>") {
                        in_b = false;
                    }
                }
                Part::Image(img) => {
                    if in_a {
                        side_a += img.bytes.len();
                    } else if in_b {
                        side_b += img.bytes.len();
                    }
                }
            }
        }
        let winner = match side_a.cmp(&side_b) {
            std::cmp::Ordering::Greater => "REPORT_A",
            std::cmp::Ordering::Less => "REPORT_B",
            std::cmp::Ordering::Equal => "DRAW",
        };
        Ok(Message::assistant(format!("```json\n{{\"winner\": \"{winner}\"}}\n```")))
    }

    fn name(&self) -> &str {
        "content-length-judge"
    }
}
