//! One report pipeline: research loop, then up to `max_rounds` of
//! draft → figures → LaTeX → PDF → pages → review, with every model call
//! journaled so interrupted runs resume from the log.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{self, DbHandle};
use crate::gateway::{Backend, ImagePart, LoggingBackend};
use crate::researcher::{self, ResearchHistory};
use crate::retriever::HypothesisTree;
use crate::reviewer::{self, ReviewError, ReviewFeedback};
use crate::templates::TemplateStore;
use crate::writer::{
    self, MarkdownReport, PdfCompiler, Rasterizer, RenderOptions,
};

use super::OrchestratorError;

/// Summary of one writer/reviewer round, persisted next to the artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub clarity: u8,
    pub layout: u8,
    /// Present for every round after the first.
    pub response_to_reviewer: Option<String>,
    /// True when the review never parsed and sentinel scores were recorded.
    pub sentinel_scores: bool,
}

#[derive(Debug)]
pub struct PipelineArtifacts {
    pub index: usize,
    pub dir: PathBuf,
    pub history: ResearchHistory,
    pub rounds: Vec<RoundRecord>,
    /// Page images of the last round, used by the judge tournament.
    pub final_pages: Vec<ImagePart>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PipelineManifest {
    pipeline: usize,
    status: String,
    rounds: usize,
    queries_executed: usize,
    started_unix_ms: u128,
    finished_unix_ms: u128,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn now_ms() -> u128 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn compiler_for(cfg: &RunConfig) -> PdfCompiler {
    if cfg.tools.latex_cmd.is_empty() {
        PdfCompiler::Builtin
    } else {
        PdfCompiler::External { cmd: cfg.tools.latex_cmd.clone() }
    }
}

fn rasterizer_for(cfg: &RunConfig) -> Rasterizer {
    if cfg.tools.raster_cmd.is_empty() {
        Rasterizer::Builtin
    } else {
        Rasterizer::External { cmd: cfg.tools.raster_cmd.clone() }
    }
}

fn persist_history(dir: &Path, history: &ResearchHistory) -> Result<(), OrchestratorError> {
    let research_dir = dir.join("research");
    std::fs::create_dir_all(&research_dir)?;
    for (i, turn) in history.turns.iter().enumerate() {
        std::fs::write(
            research_dir.join(format!("turn_{:04}.txt", i + 1)),
            &turn.assistant_text,
        )?;
        if let Some(result) = &turn.result {
            std::fs::write(
                research_dir.join(format!("turn_{:04}.result.json", i + 1)),
                data::serialize_json(result),
            )?;
        }
    }
    if let Some(report) = &history.final_report_text {
        std::fs::write(research_dir.join("final_report.txt"), report)?;
    }
    Ok(())
}

/// Run the full single-report pipeline into `run_dir/report_<index>/`.
/// Model calls go through a journaling wrapper (`calls.jsonl`), so rerunning
/// an interrupted pipeline replays completed calls and continues.
pub fn run_pipeline(
    cfg: &RunConfig,
    index: usize,
    db: &DbHandle,
    backend: &dyn Backend,
    store: &TemplateStore,
    knowledge: Option<&HypothesisTree>,
) -> Result<PipelineArtifacts, OrchestratorError> {
    let dir = cfg.run_dir.join(format!("report_{index}"));
    std::fs::create_dir_all(&dir)?;
    let started = now_ms();
    let logged = LoggingBackend::open(backend, dir.join("calls.jsonl"))?;

    let result = run_pipeline_inner(cfg, index, &dir, db, &logged, store, knowledge);
    let manifest = match &result {
        Ok(artifacts) => PipelineManifest {
            pipeline: index,
            status: "complete".into(),
            rounds: artifacts.rounds.len(),
            queries_executed: artifacts.history.executed_query_count(),
            started_unix_ms: started,
            finished_unix_ms: now_ms(),
            error: None,
        },
        Err(e) => PipelineManifest {
            pipeline: index,
            status: "failed".into(),
            rounds: 0,
            queries_executed: 0,
            started_unix_ms: started,
            finished_unix_ms: now_ms(),
            error: Some(e.to_string()),
        },
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    result
}

fn run_pipeline_inner(
    cfg: &RunConfig,
    index: usize,
    dir: &Path,
    db: &DbHandle,
    backend: &dyn Backend,
    store: &TemplateStore,
    knowledge: Option<&HypothesisTree>,
) -> Result<PipelineArtifacts, OrchestratorError> {
    let brief = cfg.client_brief();
    let limits = cfg
        .research_limits()
        .ok_or_else(|| crate::config::ConfigError::Invalid("bad research limits".into()))?;
    let query_limits = cfg.query_limits();
    let policy = cfg.termination_policy();

    // Research phase; few-shot knowledge goes into the initial prompt.
    let initial = researcher::build_initial_prompt(
        &brief,
        &limits,
        &DbHandle::schema_text(),
        knowledge,
        store,
    )?;
    let history = researcher::run_research_with_prompt(
        initial,
        &limits,
        &query_limits,
        db,
        backend,
        store,
    )?;
    persist_history(dir, &history)?;

    let render_options = RenderOptions {
        interpreter_cmd: cfg.tools.interpreter_cmd.clone(),
        timeout: Duration::from_secs(cfg.tools.figure_timeout_s),
    };
    let compiler = compiler_for(cfg);
    let rasterizer = rasterizer_for(cfg);

    // prior_drafts pairs draft t with the review of draft t.
    let mut prior_drafts: Vec<(MarkdownReport, ReviewFeedback)> = Vec::new();
    // review_pairs pairs review t with the response produced in round t+1.
    let mut review_pairs: Vec<(ReviewFeedback, String)> = Vec::new();
    let mut rounds: Vec<RoundRecord> = Vec::new();
    let mut final_pages: Vec<ImagePart> = Vec::new();

    for round in 0..policy.max_rounds {
        let round_dir = dir.join(format!("round_{round}"));
        std::fs::create_dir_all(&round_dir)?;

        let markdown = writer::draft_markdown(&history, &prior_drafts, backend, store)?;
        std::fs::write(round_dir.join("report.md"), &markdown.text)?;

        writer::render_figures(&markdown.blocks, &round_dir, &render_options)?;

        let latex = writer::to_latex(&markdown, backend, store)?;
        std::fs::write(round_dir.join("report.tex"), &latex)?;

        let response = if round > 0 {
            let text = writer::respond_to_reviewer(
                &history,
                &prior_drafts[..prior_drafts.len() - 1],
                &markdown,
                backend,
                store,
            )?;
            std::fs::write(round_dir.join("response.txt"), &text)?;
            // Attach to the previous round's review for the next review call.
            if let Some(last) = review_pairs.last_mut() {
                last.1 = text.clone();
            }
            Some(text)
        } else {
            None
        };

        let pdf = writer::compile_pdf(&latex, &round_dir, &compiler)?;
        std::fs::write(round_dir.join("report.pdf"), &pdf)?;
        let pages = writer::paginate_pdf(&pdf, &rasterizer)?;
        let pages_dir = round_dir.join("pages");
        std::fs::create_dir_all(&pages_dir)?;
        for (p, page) in pages.iter().enumerate() {
            std::fs::write(pages_dir.join(format!("page_{:03}.png", p + 1)), &page.bytes)?;
        }

        let feedback = match reviewer::review(&pages, &review_pairs, backend, store) {
            Ok(f) => f,
            // A broken judge reply must not deadlock the loop: record the
            // round with sentinel scores and keep revising.
            Err(
                e @ (ReviewError::MissingBlock
                | ReviewError::MissingKey(_)
                | ReviewError::NonInteger(_)
                | ReviewError::OutOfRange { .. }
                | ReviewError::InvalidJson(_)),
            ) => {
                let text = format!("score-parse-failure: {e}; sentinel scores recorded");
                rounds.push(RoundRecord {
                    round,
                    clarity: 1,
                    layout: 1,
                    response_to_reviewer: response.clone(),
                    sentinel_scores: true,
                });
                let sentinel = ReviewFeedback { text, clarity: 1, layout: 1, round };
                persist_review(&round_dir, &sentinel)?;
                prior_drafts.push((markdown, sentinel.clone()));
                review_pairs.push((sentinel.clone(), String::new()));
                final_pages = pages;
                if reviewer::should_terminate(&sentinel, &policy) {
                    break;
                }
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        persist_review(&round_dir, &feedback)?;
        rounds.push(RoundRecord {
            round,
            clarity: feedback.clarity,
            layout: feedback.layout,
            response_to_reviewer: response,
            sentinel_scores: false,
        });
        final_pages = pages;
        let stop = reviewer::should_terminate(&feedback, &policy);
        prior_drafts.push((markdown, feedback.clone()));
        review_pairs.push((feedback, String::new()));
        if stop {
            break;
        }
    }

    Ok(PipelineArtifacts { index, dir: dir.to_path_buf(), history, rounds, final_pages })
}

fn persist_review(round_dir: &Path, feedback: &ReviewFeedback) -> Result<(), OrchestratorError> {
    std::fs::write(round_dir.join("review.txt"), &feedback.text)?;
    let scores = serde_json::json!({
        "clarity": feedback.clarity,
        "layout": feedback.layout,
        "round": feedback.round,
    });
    std::fs::write(
        round_dir.join("scores.json"),
        serde_json::to_string_pretty(&scores).expect("scores serialize"),
    )?;
    Ok(())
}
