//! Writer agent: drafts the markdown report from research history, extracts
//! and renders figure scripts, converts to LaTeX, compiles and paginates
//! the PDF, and writes the response to the reviewer.

mod pdf;
mod render;

pub use pdf::{compile_pdf, paginate_pdf, PdfCompiler, Rasterizer};
pub use render::{render_figures, FigureFile, RenderOptions};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    complete, Backend, ChatTranscript, GatewayError, ImagePart, Message, SamplingParams,
};
use crate::researcher::ResearchHistory;
use crate::reviewer::ReviewFeedback;
use crate::templates::{fill, TemplateError, TemplateId, TemplateStore};

#[derive(Debug, Error)]
pub enum WriterError {
    #[error("draft contains no figure script blocks after {0} attempts")]
    NoBlocks(usize),
    #[error("reply contains no triple-backtick fence")]
    NoFence,
    #[error("LaTeX still contains a bare ampersand after the corrective retry")]
    StillUnescaped,
    #[error("reply is missing RESPONSE_TO_REVIEWER tags after one retry")]
    MissingTags,
    #[error("figure interpreter could not be started: {0}")]
    InterpreterMissing(String),
    #[error("LaTeX compilation failed: {0}")]
    Compile(String),
    #[error("PDF has no pages")]
    ZeroPages,
    #[error("raster tool failed: {0}")]
    RasterTool(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

impl From<std::io::Error> for WriterError {
    fn from(e: std::io::Error) -> Self {
        WriterError::Io(e.to_string())
    }
}

/// One figure-generating code block extracted from the markdown draft.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptBlock {
    /// 1-based position of the block in document order.
    pub ordinal: usize,
    pub code: String,
    /// `fig_<ordinal>.png`, the file the script is required to produce.
    pub expected_output_file: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkdownReport {
    pub text: String,
    pub blocks: Vec<ScriptBlock>,
    pub round: usize,
}

/// Everything produced for one writer round.
#[derive(Debug, Clone)]
pub struct ReportBundle {
    pub round: usize,
    pub markdown: MarkdownReport,
    pub figures: Vec<FigureFile>,
    pub latex: String,
    pub pdf: Vec<u8>,
    pub pages: Vec<ImagePart>,
    pub response_to_reviewer: Option<String>,
}

/// Extract figure script blocks: fenced code blocks tagged as python, in
/// document order, ordinals contiguous from 1. Zero blocks is a valid
/// result; `draft_markdown` decides whether that is acceptable.
pub fn extract_script_blocks(markdown_text: &str) -> Vec<ScriptBlock> {
    let mut blocks = Vec::new();
    let mut in_block: Option<(bool, String)> = None; // (is_python, code)
    for line in markdown_text.lines() {
        let trimmed = line.trim_start();
        if let Some(rest) = trimmed.strip_prefix("```") {
            match in_block.take() {
                Some((true, code)) => {
                    let ordinal = blocks.len() + 1;
                    blocks.push(ScriptBlock {
                        ordinal,
                        code,
                        expected_output_file: format!("fig_{ordinal}.png"),
                    });
                }
                Some((false, _)) => {}
                None => {
                    let tag = rest.trim().to_lowercase();
                    in_block = Some((tag == "python" || tag == "py", String::new()));
                }
            }
        } else if let Some((_, code)) = in_block.as_mut() {
            code.push_str(line);
            code.push('\n');
        }
    }
    blocks
}

fn push_draft_context(
    transcript: &mut ChatTranscript,
    history: &ResearchHistory,
    prior: &[(MarkdownReport, ReviewFeedback)],
    store: &TemplateStore,
) -> Result<(), WriterError> {
    let initial =
        fill(&store.text(TemplateId::WriterInitial)?, &[("HISTORY", &history.render_text())])?;
    transcript.push(Message::user(initial))?;
    for (report, review) in prior {
        transcript.push(Message::assistant(report.text.clone()))?;
        let round = (review.round + 1).to_string();
        let later = fill(
            &store.text(TemplateId::WriterLater)?,
            &[("ROUND", round.as_str()), ("REVIEW", review.text.as_str())],
        )?;
        transcript.push(Message::user(later))?;
    }
    Ok(())
}

/// Draft (or redraft) the markdown report. A draft with zero script blocks
/// is re-prompted with corrective text, at most twice.
pub fn draft_markdown(
    history: &ResearchHistory,
    prior: &[(MarkdownReport, ReviewFeedback)],
    backend: &dyn Backend,
    store: &TemplateStore,
) -> Result<MarkdownReport, WriterError> {
    let params = SamplingParams::generation();
    let mut transcript = ChatTranscript::new();
    push_draft_context(&mut transcript, history, prior, store)?;

    const MAX_ATTEMPTS: usize = 3; // initial call + 2 corrective retries
    for attempt in 1..=MAX_ATTEMPTS {
        let reply = complete(&transcript, &params, backend)?;
        let text = reply.joined_text();
        let blocks = extract_script_blocks(&text);
        if !blocks.is_empty() {
            return Ok(MarkdownReport { text, blocks, round: prior.len() });
        }
        if attempt == MAX_ATTEMPTS {
            return Err(WriterError::NoBlocks(MAX_ATTEMPTS));
        }
        transcript.push(reply)?;
        transcript.push(Message::user(
            "Your report contains no python code blocks for figures. Every finding must be \
             illustrated by a figure generated from a fenced python block. Re-send the full \
             markdown report with the required code blocks."
                .to_string(),
        ))?;
    }
    unreachable!("loop returns or errors")
}

/// Position of the first bare ampersand in `latex`: an `&` that is not
/// backslash-escaped, not inside `$...$` math, and not inside an alignment
/// environment where `&` is a column separator.
pub fn find_bare_ampersand(latex: &str) -> Option<usize> {
    const ALIGN_ENVS: [&str; 6] = ["tabular", "array", "align", "align*", "matrix", "pmatrix"];
    let bytes = latex.as_bytes();
    let mut in_math = false;
    let mut align_depth = 0usize;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => {
                if latex[i..].starts_with("\\begin{") || latex[i..].starts_with("\\end{") {
                    let open = latex[i..].find('{').unwrap() + i;
                    if let Some(close) = latex[open..].find('}') {
                        let env = &latex[open + 1..open + close];
                        if ALIGN_ENVS.contains(&env) {
                            if latex[i..].starts_with("\\begin{") {
                                align_depth += 1;
                            } else {
                                align_depth = align_depth.saturating_sub(1);
                            }
                        }
                        i = open + close + 1;
                        continue;
                    }
                }
                i += 2; // skip the escaped character (covers \&, \$, \\)
            }
            b'$' => {
                in_math = !in_math;
                i += 1;
            }
            b'&' => {
                if !in_math && align_depth == 0 {
                    return Some(i);
                }
                i += 1;
            }
            _ => i += 1,
        }
    }
    None
}

fn single_fence(reply: &str) -> Option<String> {
    let blocks = crate::researcher::fenced_blocks(reply);
    if blocks.len() == 1 {
        let body = blocks.into_iter().next().unwrap();
        Some(body.trim_end().to_string())
    } else {
        None
    }
}

/// Convert a markdown draft to LaTeX via the model. The reply must carry the
/// whole document in one fence; a bare unescaped `&` outside math triggers
/// one corrective re-prompt.
pub fn to_latex(
    markdown: &MarkdownReport,
    backend: &dyn Backend,
    store: &TemplateStore,
) -> Result<String, WriterError> {
    let params = SamplingParams::generation();
    let latex_template = store.text(TemplateId::LatexTemplate)?;
    let figure_example = store.text(TemplateId::WriterFigureExample)?;
    let instruction = fill(
        &store.text(TemplateId::WriterLatex)?,
        &[
            ("FIGURE_EXAMPLE", figure_example.as_str()),
            ("LATEX_TEMPLATE", latex_template.as_str()),
        ],
    )?;
    let mut transcript = ChatTranscript::new();
    transcript.push(Message::user(format!(
        "Here is the markdown report to convert:\n\n{}",
        markdown.text
    )))?;
    transcript.push(Message::user(instruction))?;

    let mut retried = false;
    loop {
        let reply = complete(&transcript, &params, backend)?;
        let text = reply.joined_text();
        let issue = match single_fence(&text) {
            None => "Your reply must contain the entire latex document in exactly one block \
                     surrounded by triple backticks. Re-send it that way."
                .to_string(),
            Some(latex) => match find_bare_ampersand(&latex) {
                None => return Ok(latex),
                Some(pos) => {
                    let context_end = (pos + 20).min(latex.len());
                    format!(
                        "Your latex contains a bare ampersand near {:?}. Escape the ampersand \
                         with a backslash (write `\\&`) and re-send the full document.",
                        &latex[pos..context_end]
                    )
                }
            },
        };
        if retried {
            return if issue.starts_with("Your reply must contain") {
                Err(WriterError::NoFence)
            } else {
                Err(WriterError::StillUnescaped)
            };
        }
        retried = true;
        transcript.push(reply)?;
        transcript.push(Message::user(issue))?;
    }
}

/// Inner text of the `<RESPONSE_TO_REVIEWER>` tags.
pub fn parse_reviewer_response(reply: &str) -> Option<String> {
    const OPEN: &str = "<RESPONSE_TO_REVIEWER>";
    const CLOSE: &str = "</RESPONSE_TO_REVIEWER>";
    let open = reply.find(OPEN)?;
    let close = reply[open..].find(CLOSE)? + open;
    Some(reply[open + OPEN.len()..close].trim().to_string())
}

/// Ask the writer for its response to the latest review, in the context of
/// the redraft it just produced.
pub fn respond_to_reviewer(
    history: &ResearchHistory,
    prior: &[(MarkdownReport, ReviewFeedback)],
    latest_draft: &MarkdownReport,
    backend: &dyn Backend,
    store: &TemplateStore,
) -> Result<String, WriterError> {
    let params = SamplingParams::generation();
    let mut transcript = ChatTranscript::new();
    push_draft_context(&mut transcript, history, prior, store)?;
    transcript.push(Message::assistant(latest_draft.text.clone()))?;
    transcript.push(Message::user(store.text(TemplateId::WriterResponse)?))?;

    let reply = complete(&transcript, &params, backend)?;
    let text = reply.joined_text();
    if let Some(inner) = parse_reviewer_response(&text) {
        return Ok(inner);
    }
    transcript.push(reply)?;
    transcript.push(Message::user(
        "Your reply is missing the RESPONSE_TO_REVIEWER tags. Surround the response with \
         <RESPONSE_TO_REVIEWER> and </RESPONSE_TO_REVIEWER> and re-send it."
            .to_string(),
    ))?;
    let retry = complete(&transcript, &params, backend)?;
    parse_reviewer_response(&retry.joined_text()).ok_or(WriterError::MissingTags)
}
