//! End-to-end wiring: single report pipelines, best-of-N batches with
//! judge selection, and the optional verifier pass. The run directory is
//! the single source of truth for everything a run produced.

mod pipeline;
mod verify;

pub use pipeline::{run_pipeline, PipelineArtifacts, RoundRecord};
pub use verify::{parse_discrepancy_table, verify_report, DiscrepancyReport, DiscrepancyRow};

use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{BackendConfig, ConfigError, RunConfig};
use crate::data::{load_fixture, DataError, DbHandle};
use crate::evaluation::{argmax, run_tournament, EvalError};
use crate::gateway::{Backend, GatewayError, HttpBackend, HttpBackendConfig, ScriptedBackend};
use crate::researcher::{build_initial_prompt, ResearcherError};
use crate::retriever::{HypothesisTree, RetrieverError};
use crate::reviewer::ReviewError;
use crate::templates::{TemplateError, TemplateStore};
use crate::writer::WriterError;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Research(#[from] ResearcherError),
    #[error(transparent)]
    Writer(#[from] WriterError),
    #[error(transparent)]
    Review(#[from] ReviewError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Retriever(#[from] RetrieverError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("io: {0}")]
    Io(String),
    #[error("all {0} pipelines failed")]
    AllPipelinesFailed(usize),
    #[error("verifier reply could not be parsed: {0}")]
    VerifierParse(String),
}

impl From<std::io::Error> for OrchestratorError {
    fn from(e: std::io::Error) -> Self {
        OrchestratorError::Io(e.to_string())
    }
}

impl OrchestratorError {
    /// Stable process exit code per failure class (0 = success, 2 = usage).
    pub fn exit_code(&self) -> i32 {
        match self {
            OrchestratorError::Config(_) => 3,
            OrchestratorError::Gateway(_) => 4,
            OrchestratorError::Data(_) => 5,
            OrchestratorError::Research(_) => 6,
            OrchestratorError::Writer(_) => 7,
            OrchestratorError::Review(_) => 8,
            OrchestratorError::Eval(_) => 9,
            OrchestratorError::Retriever(_) => 10,
            OrchestratorError::Template(_) => 11,
            OrchestratorError::Io(_) => 12,
            OrchestratorError::AllPipelinesFailed(_) => 13,
            OrchestratorError::VerifierParse(_) => 14,
        }
    }
}

/// Everything a batch run produced, by reference into the run directory.
#[derive(Debug)]
pub struct RunArtifacts {
    pub run_id: String,
    pub run_dir: PathBuf,
    pub pipelines: Vec<PipelineArtifacts>,
    pub failed: Vec<(usize, String)>,
    /// Pipeline index selected by the judge tournament.
    pub chosen_index: usize,
}

/// Build the completion backend for pipeline `index`.
pub fn make_backend(
    cfg: &BackendConfig,
    index: usize,
) -> Result<Box<dyn Backend>, OrchestratorError> {
    match cfg {
        BackendConfig::Scripted { script_path, .. } => {
            let path = script_path.replace("{i}", &index.to_string());
            Ok(Box::new(ScriptedBackend::load(std::path::Path::new(&path))?))
        }
        BackendConfig::Http { endpoint, model, auth_env } => {
            Ok(Box::new(HttpBackend::new(HttpBackendConfig {
                endpoint: endpoint.clone(),
                model: model.clone(),
                auth_env: auth_env.clone(),
                ..HttpBackendConfig::default()
            })?))
        }
    }
}

/// Build the judge backend for batch selection.
pub fn make_judge_backend(cfg: &BackendConfig) -> Result<Box<dyn Backend>, OrchestratorError> {
    match cfg {
        BackendConfig::Scripted { judge_script_path: Some(path), .. } => {
            Ok(Box::new(ScriptedBackend::load(std::path::Path::new(path))?))
        }
        BackendConfig::Scripted { judge_script_path: None, .. } => Err(ConfigError::Invalid(
            "batch mode with a scripted backend needs backend.judge_script_path".into(),
        )
        .into()),
        http @ BackendConfig::Http { .. } => make_judge_backend_http(http),
    }
}

fn make_judge_backend_http(cfg: &BackendConfig) -> Result<Box<dyn Backend>, OrchestratorError> {
    make_backend(cfg, 0)
}

/// Deterministic run id derived from the configuration contents.
pub fn run_id_for(cfg: &RunConfig) -> String {
    let serialized = toml::to_string(cfg).unwrap_or_default();
    let digest = Sha256::digest(serialized.as_bytes());
    format!("run-{:02x}{:02x}{:02x}{:02x}", digest[0], digest[1], digest[2], digest[3])
}

fn load_knowledge(cfg: &RunConfig) -> Result<Option<HypothesisTree>, OrchestratorError> {
    match (&cfg.knowledge, cfg.fewshot) {
        (Some(k), true) => {
            let raw = std::fs::read_to_string(&k.tree_path)?;
            Ok(Some(HypothesisTree::parse(&raw)?))
        }
        _ => Ok(None),
    }
}

fn template_store(cfg: &RunConfig) -> TemplateStore {
    match &cfg.template_dir {
        Some(dir) => TemplateStore::with_override_dir(dir.clone()),
        None => TemplateStore::embedded(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BatchManifest {
    run_id: String,
    n_reports: usize,
    succeeded: Vec<usize>,
    failed: Vec<(usize, String)>,
    chosen_index: usize,
    started_unix_ms: u128,
    finished_unix_ms: u128,
}

fn now_ms() -> u128 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Run `n_reports` independent pipelines, then pick the best final report
/// by pairwise tournament. Failed pipelines are excluded from judging; the
/// batch fails only if every pipeline fails.
pub fn run_batch(cfg: &RunConfig) -> Result<RunArtifacts, OrchestratorError> {
    cfg.validate()?;
    let started = now_ms();
    let db = load_fixture(&cfg.fixture_csv)?;
    let store = template_store(cfg);
    let knowledge = load_knowledge(cfg)?;
    std::fs::create_dir_all(&cfg.run_dir)?;

    let queue: Mutex<VecDeque<usize>> = Mutex::new((0..cfg.n_reports).collect());
    let results: Mutex<Vec<(usize, Result<PipelineArtifacts, String>)>> = Mutex::new(Vec::new());

    std::thread::scope(|scope| {
        for _ in 0..cfg.parallelism().min(cfg.n_reports) {
            scope.spawn(|| loop {
                let index = match queue.lock().unwrap().pop_front() {
                    Some(i) => i,
                    None => break,
                };
                let outcome = make_backend(&cfg.backend, index).and_then(|backend| {
                    run_pipeline(cfg, index, &db, backend.as_ref(), &store, knowledge.as_ref())
                });
                results
                    .lock()
                    .unwrap()
                    .push((index, outcome.map_err(|e| e.to_string())));
            });
        }
    });

    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(i, _)| *i);
    let mut pipelines = Vec::new();
    let mut failed = Vec::new();
    for (index, outcome) in results {
        match outcome {
            Ok(p) => pipelines.push(p),
            Err(message) => failed.push((index, message)),
        }
    }
    if pipelines.is_empty() {
        return Err(OrchestratorError::AllPipelinesFailed(cfg.n_reports));
    }

    let chosen_index = if pipelines.len() == 1 {
        pipelines[0].index
    } else {
        let judge = make_judge_backend(&cfg.backend)?;
        let brief = cfg.client_brief();
        let limits = cfg
            .research_limits()
            .ok_or_else(|| ConfigError::Invalid("bad research limits".into()))?;
        let creators_prompt =
            build_initial_prompt(&brief, &limits, &DbHandle::schema_text(), knowledge.as_ref(), &store)?;
        let reports: Vec<_> = pipelines.iter().map(|p| p.final_pages.clone()).collect();
        let (tensor, scores) = run_tournament(
            &reports,
            cfg.k_comparisons,
            &creators_prompt,
            judge.as_ref(),
            cfg.order_policy,
            &store,
        )?;
        let tournament = serde_json::json!({
            "tensor": tensor,
            "scores": scores,
            "pipeline_indices": pipelines.iter().map(|p| p.index).collect::<Vec<_>>(),
        });
        std::fs::write(
            cfg.run_dir.join("tournament.json"),
            serde_json::to_string_pretty(&tournament).expect("tournament serializes"),
        )?;
        pipelines[argmax(&scores.scores)].index
    };

    let run_id = run_id_for(cfg);
    let manifest = BatchManifest {
        run_id: run_id.clone(),
        n_reports: cfg.n_reports,
        succeeded: pipelines.iter().map(|p| p.index).collect(),
        failed: failed.clone(),
        chosen_index,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
    };
    std::fs::write(
        cfg.run_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;

    Ok(RunArtifacts { run_id, run_dir: cfg.run_dir.clone(), pipelines, failed, chosen_index })
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "\
order_id,order_date,company,product,category,price,quantity,customer_segment
1,2024-01-05,Acme,Widget,Tools,9.50,3,smb
2,2024-03-20,Globex,Sprocket,Parts,4.25,10,smb
";

    fn write_script(path: &std::path::Path, texts: &[&str]) {
        let mut out = String::new();
        for t in texts {
            out.push_str(&serde_json::json!({ "text": t }).to_string());
            out.push('\n');
        }
        std::fs::write(path, out).unwrap();
    }

    fn pipeline_script() -> Vec<&'static str> {
        vec![
            "q\n```\nSELECT COUNT(*) AS n FROM orders WHERE EXTRACT(YEAR FROM order_date) = 2024\n```",
            "<FINAL_ANSWER>\nSteady sales.\n</FINAL_ANSWER>",
            "# Report\n\nSteady.\n\n```python\n: > fig_1.png\n```\n",
            "```\n\\documentclass{article}\n\\begin{document}\nSteady.\n\\end{document}\n```",
            "ok\n```json\n{\"clarity\": 10, \"layout\": 10}\n```",
        ]
    }

    #[test]
    fn batch_of_three_selects_judge_winner() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path();
        std::fs::write(dir.join("orders.csv"), CSV).unwrap();
        for i in 0..3 {
            write_script(&dir.join(format!("run_{i}.jsonl")), &pipeline_script());
        }
        // Pairs in (0,1), (0,2), (1,2) order, k = 1: report 1 beats 0,
        // 0 draws 2, 1 beats 2 → aggregate scores [−0.5, 1, −0.5].
        let verdicts = [
            "```json\n{\"winner\": \"REPORT_B\"}\n```",
            "```json\n{\"winner\": \"DRAW\"}\n```",
            "```json\n{\"winner\": \"REPORT_A\"}\n```",
        ];
        write_script(&dir.join("judge.jsonl"), &verdicts);

        let cfg: RunConfig = toml::from_str(&format!(
            r#"
fixture_csv = "{csv}"
run_dir = "{run}"
n_reports = 3
k_comparisons = 1

[brief]
client_company = "Acme"

[limits]
min_queries = 1
max_queries = 2

[tools]
interpreter_cmd = ["sh"]

[backend]
kind = "scripted"
script_path = "{scripts}/run_{{i}}.jsonl"
judge_script_path = "{scripts}/judge.jsonl"
"#,
            csv = dir.join("orders.csv").display(),
            run = dir.join("runs").display(),
            scripts = dir.display(),
        ))
        .unwrap();

        let artifacts = run_batch(&cfg).unwrap();
        assert_eq!(artifacts.pipelines.len(), 3);
        assert!(artifacts.failed.is_empty());
        assert_eq!(artifacts.chosen_index, 1);
        assert!(cfg.run_dir.join("tournament.json").exists());
        assert!(cfg.run_dir.join("manifest.json").exists());
        assert!(cfg.run_dir.join("report_2/round_0/report.pdf").exists());
    }

    #[test]
    fn batch_fails_only_when_every_pipeline_fails() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path();
        std::fs::write(dir.join("orders.csv"), CSV).unwrap();
        // Empty scripts: every backend call fails immediately.
        for i in 0..2 {
            write_script(&dir.join(format!("run_{i}.jsonl")), &[]);
        }
        let cfg: RunConfig = toml::from_str(&format!(
            r#"
fixture_csv = "{csv}"
run_dir = "{run}"
n_reports = 2

[brief]
client_company = "Acme"

[backend]
kind = "scripted"
script_path = "{scripts}/run_{{i}}.jsonl"
judge_script_path = "{scripts}/missing.jsonl"
"#,
            csv = dir.join("orders.csv").display(),
            run = dir.join("runs").display(),
            scripts = dir.display(),
        ))
        .unwrap();
        let err = run_batch(&cfg).unwrap_err();
        assert!(matches!(err, OrchestratorError::AllPipelinesFailed(2)));
        assert_eq!(err.exit_code(), 13);
    }
}
