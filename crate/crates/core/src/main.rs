//! Command-line entry point for the report engine.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use autoreport::config::RunConfig;
use autoreport::data::{self, load_fixture};
use autoreport::evaluation::pearson_with_p;
use autoreport::gateway::{Backend, ImagePart, ScriptedBackend};
use autoreport::orchestrator::{
    self, make_backend, run_batch, verify_report, OrchestratorError,
};
use autoreport::researcher::{ResearchHistory, ResearchTurn};
use autoreport::retriever::{self, HashEmbedder, HypothesisTree};
use autoreport::templates::TemplateStore;

#[derive(Parser)]
#[command(name = "autoreport", version, about = "Multi-agent market report generator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single report pipeline.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run n_reports pipelines and pick the best via a judge tournament.
    Batch {
        #[arg(long)]
        config: PathBuf,
    },
    /// Ingest expert documents into a knowledge base; optionally distill
    /// them into a hypothesis tree with a model backend.
    Retrieve {
        /// Directory of plain-text expert documents.
        #[arg(long)]
        docs_dir: PathBuf,
        /// Output directory for the embedded knowledge base.
        #[arg(long)]
        kb_out: PathBuf,
        /// Scripted backend JSONL driving extract → refine → cluster.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Where to write the distilled hypothesis tree JSON.
        #[arg(long)]
        tree_out: Option<PathBuf>,
    },
    /// Adapt a hypothesis tree to a new client by validating SQL per leaf.
    Transfer {
        #[arg(long)]
        config: PathBuf,
        /// Source hypothesis tree JSON.
        #[arg(long)]
        tree: PathBuf,
        /// Output path for the validated, pruned tree.
        #[arg(long)]
        tree_out: PathBuf,
        /// Re-prompting passes over failing leaves.
        #[arg(long, default_value_t = 2)]
        max_passes: usize,
    },
    /// Pearson agreement between two `id,score` CSV files.
    Evaluate {
        #[arg(long)]
        human: PathBuf,
        #[arg(long)]
        ai: PathBuf,
    },
    /// Fact-check a finished report directory against the database.
    Verify {
        #[arg(long)]
        config: PathBuf,
        /// A `report_<i>` directory produced by `run` or `batch`.
        #[arg(long)]
        report_dir: PathBuf,
        /// Scripted backend override for the checker agent.
        #[arg(long)]
        script: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<(), OrchestratorError> {
    match command {
        Command::Run { config } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.n_reports = 1;
            cfg.parallelism = Some(1);
            let artifacts = run_batch(&cfg)?;
            println!("run {} complete: {}", artifacts.run_id, artifacts.run_dir.display());
            Ok(())
        }
        Command::Batch { config } => {
            let cfg = RunConfig::load(&config)?;
            let artifacts = run_batch(&cfg)?;
            println!(
                "run {} complete: {} of {} pipelines succeeded, report_{} selected",
                artifacts.run_id,
                artifacts.pipelines.len(),
                cfg.n_reports,
                artifacts.chosen_index
            );
            Ok(())
        }
        Command::Retrieve { docs_dir, kb_out, script, tree_out } => {
            retrieve(&docs_dir, &kb_out, script.as_deref(), tree_out.as_deref())
        }
        Command::Transfer { config, tree, tree_out, max_passes } => {
            transfer(&config, &tree, &tree_out, max_passes)
        }
        Command::Evaluate { human, ai } => evaluate(&human, &ai),
        Command::Verify { config, report_dir, script } => {
            verify(&config, &report_dir, script.as_deref())
        }
    }
}

fn retrieve(
    docs_dir: &Path,
    kb_out: &Path,
    script: Option<&Path>,
    tree_out: Option<&Path>,
) -> Result<(), OrchestratorError> {
    let embedder = HashEmbedder::default();
    let kb = retriever::ingest(docs_dir, &embedder)?;
    kb.save(kb_out)?;
    println!("knowledge base: {} chunks → {}", kb.items.len(), kb_out.display());

    let Some(tree_out) = tree_out else { return Ok(()) };
    let script = script.ok_or_else(|| {
        OrchestratorError::Io("--tree-out requires --script for the distillation backend".into())
    })?;
    let backend = ScriptedBackend::load(script)?;
    let store = TemplateStore::embedded();
    let chunks: Vec<String> = kb.items.iter().map(|item| item.text.clone()).collect();
    let pairs = retriever::extract_pairs(&chunks, &backend, &store)?;
    let refined = retriever::refine_merge(&pairs, &backend, &store)?;
    let mut augmented = Vec::with_capacity(refined.len());
    for pair in &refined {
        augmented.push(retriever::rag_augment(pair, &kb, &embedder, &backend, &store)?);
    }
    let tree = retriever::build_tree(&augmented, &backend, &store)?;
    std::fs::write(tree_out, serde_json::to_string_pretty(&tree).expect("tree serializes"))?;
    println!("hypothesis tree: {} leaves → {}", tree.leaf_count(), tree_out.display());
    Ok(())
}

fn transfer(
    config: &Path,
    tree: &Path,
    tree_out: &Path,
    max_passes: usize,
) -> Result<(), OrchestratorError> {
    let cfg = RunConfig::load(config)?;
    let source = HypothesisTree::parse(&std::fs::read_to_string(tree)?)?;
    let db = load_fixture(&cfg.fixture_csv)?;
    let backend = make_backend(&cfg.backend, 0)?;
    let store = TemplateStore::embedded();
    let (validated, records) = retriever::transfer(
        &source,
        &cfg.client_brief(),
        &db,
        backend.as_ref(),
        max_passes,
        &cfg.query_limits(),
        &store,
    )?;
    std::fs::write(
        tree_out,
        serde_json::to_string_pretty(&validated).expect("tree serializes"),
    )?;
    let kept = validated.leaf_count();
    let attempted = records.len();
    println!(
        "transfer: {kept} of {} leaves validated ({attempted} attempts) → {}",
        source.leaf_count(),
        tree_out.display()
    );
    Ok(())
}

fn read_scores(path: &Path) -> Result<BTreeMap<String, f64>, OrchestratorError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| OrchestratorError::Io(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| OrchestratorError::Io(e.to_string()))?;
        if record.len() != 2 {
            return Err(OrchestratorError::Io(format!(
                "{}: each row must be `id,score`",
                path.display()
            )));
        }
        let id = record[0].trim().to_string();
        if id == "id" {
            continue; // optional header row
        }
        let score: f64 = record[1].trim().parse().map_err(|_| {
            OrchestratorError::Io(format!("{}: bad score for id {id}", path.display()))
        })?;
        if out.insert(id.clone(), score).is_some() {
            return Err(OrchestratorError::Io(format!(
                "{}: duplicate id {id}",
                path.display()
            )));
        }
    }
    Ok(out)
}

fn evaluate(human: &Path, ai: &Path) -> Result<(), OrchestratorError> {
    let human_scores = read_scores(human)?;
    let ai_scores = read_scores(ai)?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (id, x) in &human_scores {
        let Some(y) = ai_scores.get(id) else {
            return Err(OrchestratorError::Io(format!("id {id} missing from {}", ai.display())));
        };
        xs.push(*x);
        ys.push(*y);
    }
    if xs.len() != ai_scores.len() {
        return Err(OrchestratorError::Io(format!(
            "{} has ids missing from {}",
            ai.display(),
            human.display()
        )));
    }
    let (r, p) = pearson_with_p(&xs, &ys)
        .map_err(|e| OrchestratorError::Io(format!("correlation failed: {e}")))?;
    println!("n = {}", xs.len());
    println!("pearson_r = {r:.6}");
    println!("p_value = {p:.6}");
    Ok(())
}

fn load_history(report_dir: &Path) -> Result<ResearchHistory, OrchestratorError> {
    let research_dir = report_dir.join("research");
    let mut turns = Vec::new();
    for i in 1.. {
        let text_path = research_dir.join(format!("turn_{i:04}.txt"));
        if !text_path.exists() {
            break;
        }
        let assistant_text = std::fs::read_to_string(&text_path)?;
        let result_path = research_dir.join(format!("turn_{i:04}.result.json"));
        let result = if result_path.exists() {
            Some(data::parse_json(&std::fs::read_to_string(&result_path)?)?)
        } else {
            None
        };
        turns.push(ResearchTurn { assistant_text, extracted_query: None, result });
    }
    let final_path = research_dir.join("final_report.txt");
    let final_report_text =
        final_path.exists().then(|| std::fs::read_to_string(&final_path)).transpose()?;
    Ok(ResearchHistory { turns, final_report_text })
}

fn last_round_dir(report_dir: &Path) -> Result<PathBuf, OrchestratorError> {
    (0..)
        .map(|r| report_dir.join(format!("round_{r}")))
        .take_while(|d| d.is_dir())
        .last()
        .ok_or_else(|| {
            OrchestratorError::Io(format!("no round directories in {}", report_dir.display()))
        })
}

fn load_pages(round_dir: &Path) -> Result<Vec<ImagePart>, OrchestratorError> {
    let pages_dir = round_dir.join("pages");
    let mut paths: Vec<_> = std::fs::read_dir(&pages_dir)
        .map_err(|e| OrchestratorError::Io(format!("{}: {e}", pages_dir.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    paths.sort();
    let mut pages = Vec::new();
    for path in paths {
        let bytes = std::fs::read(&path)?;
        let img = image::load_from_memory(&bytes)
            .map_err(|e| OrchestratorError::Io(format!("{}: {e}", path.display())))?;
        pages.push(
            ImagePart::new(bytes, img.width(), img.height(), "png")
                .map_err(OrchestratorError::Gateway)?,
        );
    }
    Ok(pages)
}

fn verify(
    config: &Path,
    report_dir: &Path,
    script: Option<&Path>,
) -> Result<(), OrchestratorError> {
    let cfg = RunConfig::load(config)?;
    let db = load_fixture(&cfg.fixture_csv)?;
    let store = TemplateStore::embedded();
    let history = load_history(report_dir)?;
    let round_dir = last_round_dir(report_dir)?;
    let latex = std::fs::read_to_string(round_dir.join("report.tex"))?;
    let pages = load_pages(&round_dir)?;
    let backend: Box<dyn Backend> = match script {
        Some(path) => Box::new(ScriptedBackend::load(path)?),
        None => make_backend(&cfg.backend, 0)?,
    };
    let limits = cfg.research_limits().ok_or_else(|| {
        autoreport::config::ConfigError::Invalid("bad research limits".into())
    })?;
    let rows = verify_report(
        &pages,
        &latex,
        &history,
        &db,
        backend.as_ref(),
        &limits,
        &cfg.query_limits(),
        &store,
    )?;
    let report = orchestrator::DiscrepancyReport { rows };
    std::fs::write(
        report_dir.join("verification.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    if report.rows.is_empty() {
        println!("no discrepancies found");
    } else {
        println!("| data | reported | actual |");
        println!("|------|----------|--------|");
        for row in &report.rows {
            println!("| {} | {} | {} |", row.data, row.reported, row.actual);
        }
    }
    Ok(())
}
