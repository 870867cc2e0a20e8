//! Run configuration: one TOML file describing the client brief, loop
//! limits, backend wiring, database fixture and tool commands.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::QueryLimits;
use crate::evaluation::OrderPolicy;
use crate::researcher::{ClientBrief, ResearchLimits};
use crate::reviewer::TerminationPolicy;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Unreadable { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BriefConfig {
    pub client_company: String,
    #[serde(default)]
    pub client_provided_info: String,
    #[serde(default)]
    pub category: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitsConfig {
    pub min_queries: usize,
    pub max_queries: usize,
    pub report_max_words: usize,
    pub max_rows: usize,
    pub required_year: Option<i32>,
}

impl Default for LimitsConfig {
    fn default() -> Self {
        let r = ResearchLimits::default();
        let q = QueryLimits::default();
        Self {
            min_queries: r.min_queries,
            max_queries: r.max_queries,
            report_max_words: r.report_max_words,
            max_rows: q.max_rows,
            required_year: q.required_year,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub max_rounds: usize,
    pub perfect_score: u8,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        let p = TerminationPolicy::default();
        Self { max_rounds: p.max_rounds, perfect_score: p.perfect_score }
    }
}

/// Which completion backend serves the agents.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    /// Deterministic replay from JSONL script files. `script_path` may
    /// contain `{i}` which is replaced by the pipeline index in batch mode.
    Scripted {
        script_path: String,
        /// Separate script for the judge in batch tournaments.
        #[serde(default)]
        judge_script_path: Option<String>,
    },
    Http {
        endpoint: String,
        model: String,
        #[serde(default = "default_auth_env")]
        auth_env: String,
    },
}

fn default_auth_env() -> String {
    "LLM_API_KEY".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolsConfig {
    /// Figure-script interpreter argv prefix.
    pub interpreter_cmd: Vec<String>,
    /// LaTeX compiler argv prefix; empty means the built-in typesetter.
    pub latex_cmd: Vec<String>,
    /// PDF rasterizer argv prefix; empty means the built-in paginator.
    pub raster_cmd: Vec<String>,
    pub figure_timeout_s: u64,
}

impl Default for ToolsConfig {
    fn default() -> Self {
        Self {
            interpreter_cmd: vec!["python3".into()],
            latex_cmd: vec![],
            raster_cmd: vec![],
            figure_timeout_s: 60,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeConfig {
    /// Serialized hypothesis tree (clustering schema JSON) to inject as
    /// few-shot context.
    pub tree_path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub brief: BriefConfig,
    #[serde(default)]
    pub limits: LimitsConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub fewshot: bool,
    #[serde(default = "one")]
    pub n_reports: usize,
    #[serde(default = "one")]
    pub k_comparisons: usize,
    #[serde(default)]
    pub order_policy: OrderPolicy,
    #[serde(default)]
    pub seed: u64,
    /// Parallel pipelines in flight; defaults to n_reports.
    #[serde(default)]
    pub parallelism: Option<usize>,
    pub backend: BackendConfig,
    /// CSV fixture loaded into the in-memory `orders` table.
    pub fixture_csv: PathBuf,
    pub run_dir: PathBuf,
    #[serde(default)]
    pub tools: ToolsConfig,
    #[serde(default)]
    pub knowledge: Option<KnowledgeConfig>,
    /// Directory of template files overriding the embedded ones.
    #[serde(default)]
    pub template_dir: Option<PathBuf>,
}

fn one() -> usize {
    1
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let cfg: Self =
            toml::from_str(&raw).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.brief.client_company.trim().is_empty() {
            return Err(ConfigError::Invalid("brief.client_company must be nonempty".into()));
        }
        if self.n_reports < 1 {
            return Err(ConfigError::Invalid("n_reports must be at least 1".into()));
        }
        if self.k_comparisons < 1 {
            return Err(ConfigError::Invalid("k_comparisons must be at least 1".into()));
        }
        if self.research_limits().is_none() {
            return Err(ConfigError::Invalid(
                "limits: need 1 <= min_queries <= max_queries".into(),
            ));
        }
        if self.policy.max_rounds < 1 {
            return Err(ConfigError::Invalid("policy.max_rounds must be at least 1".into()));
        }
        if self.limits.max_rows == 0 {
            return Err(ConfigError::Invalid("limits.max_rows must be positive".into()));
        }
        if self.fewshot && self.knowledge.is_none() {
            return Err(ConfigError::Invalid(
                "fewshot = true requires a [knowledge] section".into(),
            ));
        }
        Ok(())
    }

    pub fn client_brief(&self) -> ClientBrief {
        ClientBrief {
            client_company: self.brief.client_company.clone(),
            client_provided_info: self.brief.client_provided_info.clone(),
            category: self.brief.category.clone(),
        }
    }

    pub fn research_limits(&self) -> Option<ResearchLimits> {
        ResearchLimits::new(
            self.limits.min_queries,
            self.limits.max_queries,
            self.limits.report_max_words,
        )
    }

    pub fn query_limits(&self) -> QueryLimits {
        QueryLimits { max_rows: self.limits.max_rows, required_year: self.limits.required_year }
    }

    pub fn termination_policy(&self) -> TerminationPolicy {
        TerminationPolicy {
            max_rounds: self.policy.max_rounds,
            perfect_score: self.policy.perfect_score,
        }
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism.unwrap_or(self.n_reports).max(1)
    }
}
