//! Research loop: prompt assembly, SQL extraction, constraint lint, result
//! feedback and final-answer detection.
//!
//! The loop keeps asking the model for one query at a time, executes it and
//! feeds the JSON table back, until the model produces a final report (after
//! at least `min_queries` executed queries) or the query budget runs out.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{self, DataError, DbHandle, QueryLimits, SqlQuery, TableResult};
use crate::gateway::{complete, Backend, ChatTranscript, GatewayError, Message, SamplingParams};
use crate::retriever::HypothesisTree;
use crate::templates::{fill, TemplateError, TemplateId, TemplateStore};

#[derive(Debug, Error)]
pub enum ResearcherError {
    #[error("missing placeholder: {0}")]
    Template(#[from] TemplateError),
    #[error("assistant reply contains {0} fenced blocks; only one SQL query is allowed")]
    MultipleFences(usize),
    #[error("unbalanced FINAL_ANSWER tags")]
    UnbalancedTags,
    #[error("model produced neither SQL nor a final answer for 3 consecutive turns")]
    ModelNoncompliance { partial: ResearchHistory },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("database aborted the run: {0}")]
    Db(DataError),
}

/// What the client told us before research started.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientBrief {
    pub client_company: String,
    pub client_provided_info: String,
    pub category: Option<String>,
}

impl ClientBrief {
    pub fn new(
        client_company: impl Into<String>,
        client_provided_info: impl Into<String>,
        category: Option<String>,
    ) -> Result<Self, ResearcherError> {
        let client_company = client_company.into();
        if client_company.trim().is_empty() {
            return Err(ResearcherError::Template(TemplateError::Io(
                "client_company must be nonempty".into(),
            )));
        }
        Ok(Self { client_company, client_provided_info: client_provided_info.into(), category })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResearchLimits {
    pub min_queries: usize,
    pub max_queries: usize,
    pub report_max_words: usize,
}

impl Default for ResearchLimits {
    fn default() -> Self {
        Self { min_queries: 4, max_queries: 8, report_max_words: 2500 }
    }
}

impl ResearchLimits {
    pub fn new(min_queries: usize, max_queries: usize, report_max_words: usize) -> Option<Self> {
        (1 <= min_queries && min_queries <= max_queries)
            .then_some(Self { min_queries, max_queries, report_max_words })
    }
}

/// One loop turn: the model's text plus whatever we extracted and executed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResearchTurn {
    pub assistant_text: String,
    pub extracted_query: Option<SqlQuery>,
    pub result: Option<TableResult>,
}

/// Full output of one research session.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResearchHistory {
    pub turns: Vec<ResearchTurn>,
    pub final_report_text: Option<String>,
}

impl ResearchHistory {
    pub fn executed_query_count(&self) -> usize {
        self.turns.iter().filter(|t| t.extracted_query.is_some()).count()
    }

    /// Plain-text rendering used as the `{HISTORY}` input to the writer.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for (i, turn) in self.turns.iter().enumerate() {
            out.push_str(&format!("Assistant (turn {}):\n{}\n", i + 1, turn.assistant_text));
            if let Some(result) = &turn.result {
                out.push_str("Human (query result):\n");
                out.push_str(&data::serialize_json(result));
                out.push('\n');
            }
            out.push('\n');
        }
        if let Some(report) = &self.final_report_text {
            out.push_str("Final research report:\n");
            out.push_str(report);
            out.push('\n');
        }
        out
    }
}

/// A lint finding on an agent-authored query. Advisory only: findings are
/// appended to the next user turn as corrective text, never hard failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Violation {
    MissingYearFilter,
    DiscouragedDateFormat,
    UnboundedResult,
}

impl Violation {
    pub fn message(self) -> &'static str {
        match self {
            Violation::MissingYearFilter => {
                "the query does not restrict rows with `EXTRACT(YEAR FROM ...) = 2024`"
            }
            Violation::DiscouragedDateFormat => {
                "use `EXTRACT(YEAR FROM ...)` instead of `DATE_FORMAT(...)` for year filtering"
            }
            Violation::UnboundedResult => {
                "the query has neither an aggregation nor a LIMIT and may return too many rows"
            }
        }
    }
}

/// Build the initial researcher prompt from the template, optionally
/// injecting a rendered hypothesis tree as a few-shot section.
pub fn build_initial_prompt(
    brief: &ClientBrief,
    limits: &ResearchLimits,
    schema_text: &str,
    knowledge: Option<&HypothesisTree>,
    store: &TemplateStore,
) -> Result<String, ResearcherError> {
    let template = store.text(TemplateId::ResearcherInitial).map_err(ResearcherError::Template)?;
    let fewshot = match knowledge {
        None => String::new(),
        Some(tree) => format!(
            "\n# Expert Knowledge\n\nHere are examples of how expert consultants structured \
             their reasoning for comparable problems. Use them as few-shot guidance for your \
             own hypotheses:\n\n<EXPERT_HYPOTHESES>\n{}</EXPERT_HYPOTHESES>\n",
            tree.render_fewshot()
        ),
    };
    let prompt = fill(
        &template,
        &[
            ("CLIENT_COMPANY", brief.client_company.as_str()),
            ("CLIENT_PROVIDED_INFO", brief.client_provided_info.as_str()),
            ("DB_SCHEMA", schema_text),
            ("EXAMPLE_SQL", EXAMPLE_SQL),
            ("MIN_QUERIES", &limits.min_queries.to_string()),
            ("MAX_QUERIES", &limits.max_queries.to_string()),
            ("REPORT_MAX_WRDS", &limits.report_max_words.to_string()),
            ("EXPERT_KNOWLEDGE_SECTION", &fewshot),
        ],
    )?;
    Ok(prompt)
}

pub const EXAMPLE_SQL: &str =
    "SELECT category, COUNT(*) AS orders FROM orders WHERE EXTRACT(YEAR FROM order_date) = 2024 GROUP BY category";

/// Contents of the fenced blocks in `text`, in document order. The opening
/// fence line may carry a language tag, which is ignored.
pub(crate) fn fenced_blocks(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current: Option<String> = None;
    for line in text.lines() {
        let trimmed = line.trim_start();
        if trimmed.starts_with("```") {
            match current.take() {
                Some(block) => blocks.push(block),
                None => current = Some(String::new()),
            }
        } else if let Some(block) = current.as_mut() {
            block.push_str(line);
            block.push('\n');
        }
    }
    // An unterminated fence still yields its content.
    if let Some(block) = current {
        blocks.push(block);
    }
    blocks
}

/// Extract the single SQL query from an assistant reply: the contents of the
/// first triple-backtick fence, trimmed. More than one fence is a constraint
/// violation that the loop feeds back as corrective text.
pub fn extract_sql(assistant_text: &str) -> Result<Option<SqlQuery>, ResearcherError> {
    extract_sql_at_round(assistant_text, 0)
}

pub fn extract_sql_at_round(
    assistant_text: &str,
    round: usize,
) -> Result<Option<SqlQuery>, ResearcherError> {
    let blocks = fenced_blocks(assistant_text);
    match blocks.len() {
        0 => Ok(None),
        1 => {
            let text = blocks[0].trim();
            if text.is_empty() {
                return Ok(None);
            }
            match SqlQuery::new(text, round) {
                Ok(q) => Ok(Some(q)),
                // A fence holding a multi-statement blob counts as multiple queries.
                Err(_) => Err(ResearcherError::MultipleFences(1)),
            }
        }
        n => Err(ResearcherError::MultipleFences(n)),
    }
}

/// Inner text between `<FINAL_ANSWER>` and `</FINAL_ANSWER>`, trimmed.
pub fn detect_final_answer(assistant_text: &str) -> Result<Option<String>, ResearcherError> {
    const OPEN: &str = "<FINAL_ANSWER>";
    const CLOSE: &str = "</FINAL_ANSWER>";
    let open = assistant_text.find(OPEN);
    let close = assistant_text.find(CLOSE);
    match (open, close) {
        (None, None) => Ok(None),
        (Some(o), Some(c)) if o + OPEN.len() <= c => {
            Ok(Some(assistant_text[o + OPEN.len()..c].trim().to_string()))
        }
        _ => Err(ResearcherError::UnbalancedTags),
    }
}

/// Lint an agent query against the prompt-level data constraints.
pub fn enforce_constraints(q: &SqlQuery, limits: &QueryLimits) -> Vec<Violation> {
    use std::sync::OnceLock;
    static YEAR_RE: OnceLock<regex::Regex> = OnceLock::new();

    let upper = q.text.to_uppercase();
    let mut findings = Vec::new();

    if let Some(year) = limits.required_year {
        let re = YEAR_RE.get_or_init(|| {
            regex::Regex::new(r"EXTRACT\s*\(\s*YEAR\s+FROM\s+[^)]+\)\s*=\s*(\d{4})").unwrap()
        });
        let has_filter = re
            .captures_iter(&upper)
            .any(|c| c[1].parse::<i32>().map(|y| y == year).unwrap_or(false));
        if !has_filter {
            findings.push(Violation::MissingYearFilter);
        }
    }

    if upper.contains("DATE_FORMAT(") || upper.contains("DATE_FORMAT (") {
        findings.push(Violation::DiscouragedDateFormat);
    }

    let has_aggregate = ["COUNT(", "SUM(", "AVG(", "MIN(", "MAX(", "GROUP BY"]
        .iter()
        .any(|kw| upper.contains(kw));
    if !has_aggregate && !upper.contains("LIMIT") {
        findings.push(Violation::UnboundedResult);
    }

    findings
}

/// Run the full research loop against `db` and `backend`.
///
/// Early final answers (before `min_queries` executed queries) are rejected
/// with a corrective re-prompt. After `max_queries` extracted queries, the
/// next user turn demands the final answer. Three consecutive unusable
/// turns abort the session with the partial history attached.
pub fn run_research(
    brief: &ClientBrief,
    limits: &ResearchLimits,
    query_limits: &QueryLimits,
    db: &DbHandle,
    backend: &dyn Backend,
    store: &TemplateStore,
) -> Result<ResearchHistory, ResearcherError> {
    let params = SamplingParams::generation();
    let mut transcript = ChatTranscript::new();
    transcript.push(Message::system(store.text(TemplateId::ResearcherSystem)?))?;
    let initial =
        build_initial_prompt(brief, limits, &DbHandle::schema_text(), None, store)?;
    transcript.push(Message::user(initial))?;
    run_research_loop(limits, query_limits, db, backend, transcript, params)
}

/// Variant that takes a pre-built initial prompt (used when few-shot
/// knowledge has been injected by the orchestrator).
pub fn run_research_with_prompt(
    initial_prompt: String,
    limits: &ResearchLimits,
    query_limits: &QueryLimits,
    db: &DbHandle,
    backend: &dyn Backend,
    store: &TemplateStore,
) -> Result<ResearchHistory, ResearcherError> {
    let params = SamplingParams::generation();
    let mut transcript = ChatTranscript::new();
    transcript.push(Message::system(store.text(TemplateId::ResearcherSystem)?))?;
    transcript.push(Message::user(initial_prompt))?;
    run_research_loop(limits, query_limits, db, backend, transcript, params)
}

fn run_research_loop(
    limits: &ResearchLimits,
    query_limits: &QueryLimits,
    db: &DbHandle,
    backend: &dyn Backend,
    mut transcript: ChatTranscript,
    params: SamplingParams,
) -> Result<ResearchHistory, ResearcherError> {
    let mut history = ResearchHistory::default();
    let mut noncompliant_streak = 0usize;

    loop {
        let reply = complete(&transcript, &params, backend)?;
        let text = reply.joined_text();
        transcript.push(reply)?;
        let executed = history.executed_query_count();

        // Final answer takes precedence over any stray fence in the reply.
        match detect_final_answer(&text) {
            Ok(Some(report)) => {
                if executed >= limits.min_queries {
                    history.turns.push(ResearchTurn {
                        assistant_text: text,
                        extracted_query: None,
                        result: None,
                    });
                    history.final_report_text = Some(report);
                    return Ok(history);
                }
                history.turns.push(ResearchTurn {
                    assistant_text: text,
                    extracted_query: None,
                    result: None,
                });
                noncompliant_streak = 0;
                transcript.push(Message::user(format!(
                    "Your research so far used {executed} queries, but the task requires at \
                     least {} queries before the final answer. Please continue your research \
                     with the next SQL query.",
                    limits.min_queries
                )))?;
                continue;
            }
            Ok(None) => {}
            Err(ResearcherError::UnbalancedTags) => {
                history.turns.push(ResearchTurn {
                    assistant_text: text,
                    extracted_query: None,
                    result: None,
                });
                noncompliant_streak += 1;
                if noncompliant_streak >= 3 {
                    return Err(ResearcherError::ModelNoncompliance { partial: history });
                }
                transcript.push(Message::user(
                    "Your FINAL_ANSWER tags are unbalanced. Surround the complete report with \
                     <FINAL_ANSWER> and </FINAL_ANSWER>."
                        .to_string(),
                ))?;
                continue;
            }
            Err(e) => return Err(e),
        }

        let at_cap = executed >= limits.max_queries;
        let extraction = if at_cap { Ok(None) } else { extract_sql_at_round(&text, executed) };
        match extraction {
            Ok(Some(query)) => {
                noncompliant_streak = 0;
                let lint = enforce_constraints(&query, query_limits);
                let exec = data::execute(db, &query, query_limits);
                let (result, mut feedback) = match exec {
                    Ok(result) => {
                        let json = data::serialize_json(&result);
                        (Some(result), format!("Query result (JSON):\n{json}"))
                    }
                    Err(DataError::SqlSyntax(msg)) => (
                        None,
                        format!(
                            "Your query failed with a SQL error and returned no data:\n{msg}\n\
                             Please correct the query and try again."
                        ),
                    ),
                    Err(e) => return Err(ResearcherError::Db(e)),
                };
                if !lint.is_empty() {
                    feedback.push_str("\n\nAdvisory notes on your query:");
                    for v in &lint {
                        feedback.push_str(&format!("\n- {}", v.message()));
                    }
                }
                history.turns.push(ResearchTurn {
                    assistant_text: text,
                    extracted_query: Some(query),
                    result,
                });
                if history.executed_query_count() >= limits.max_queries {
                    feedback.push_str(
                        "\n\nYou have now used the maximum number of SQL queries. Write your \
                         final report surrounded by <FINAL_ANSWER> and </FINAL_ANSWER>.",
                    );
                }
                transcript.push(Message::user(feedback))?;
            }
            Ok(None) => {
                history.turns.push(ResearchTurn {
                    assistant_text: text,
                    extracted_query: None,
                    result: None,
                });
                noncompliant_streak += 1;
                if noncompliant_streak >= 3 {
                    return Err(ResearcherError::ModelNoncompliance { partial: history });
                }
                let demand = if at_cap {
                    "You have used the maximum number of SQL queries; no further queries will \
                     be executed. Write your final report now, surrounded by <FINAL_ANSWER> \
                     and </FINAL_ANSWER>."
                        .to_string()
                } else {
                    "Your reply contained neither a SQL query in a triple-backtick fence nor a \
                     final report in FINAL_ANSWER tags. Please continue with exactly one SQL \
                     query, or write the final report."
                        .to_string()
                };
                transcript.push(Message::user(demand))?;
            }
            Err(ResearcherError::MultipleFences(n)) => {
                history.turns.push(ResearchTurn {
                    assistant_text: text,
                    extracted_query: None,
                    result: None,
                });
                noncompliant_streak += 1;
                if noncompliant_streak >= 3 {
                    return Err(ResearcherError::ModelNoncompliance { partial: history });
                }
                transcript.push(Message::user(format!(
                    "Your reply contained {n} SQL queries, but you must never generate more \
                     than one SQL query at a time. Please re-send only the single next query."
                )))?;
            }
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ScriptedBackend;
    use std::io::Write as _;

    fn fixture_db() -> DbHandle {
        let path = std::env::temp_dir().join(format!("research_fixture_{}.csv", std::process::id()));
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "order_id,order_date,company,product,category,price,quantity,customer_segment")
            .unwrap();
        for i in 0..20 {
            writeln!(f, "{i},2024-05-01,Acme,Widget,gadgets,3.5,1,consumer").unwrap();
        }
        crate::data::load_fixture(&path).unwrap()
    }

    fn brief() -> ClientBrief {
        ClientBrief::new("Client 123456789", "- optimize sales", None).unwrap()
    }

    #[test]
    fn initial_prompt_names_the_client() {
        let p = build_initial_prompt(
            &brief(),
            &ResearchLimits::default(),
            &DbHandle::schema_text(),
            None,
            &TemplateStore::embedded(),
        )
        .unwrap();
        assert!(p.contains("Your client is Client 123456789"));
        assert!(crate::templates::find_unresolved(&p).is_none());
        assert!(!p.contains("EXPERT_HYPOTHESES"));
    }

    #[test]
    fn initial_prompt_embeds_tree_exactly_once() {
        let tree = HypothesisTree::single(
            "Focus on bundles",
            "Bundles raise order value",
            "Attachment rate is 12%",
        );
        let p = build_initial_prompt(
            &brief(),
            &ResearchLimits::default(),
            &DbHandle::schema_text(),
            Some(&tree),
            &TemplateStore::embedded(),
        )
        .unwrap();
        let rendered = tree.render_fewshot();
        assert_eq!(p.matches(&rendered).count(), 1);
        assert!(p.contains("<EXPERT_HYPOTHESES>"));
    }

    #[test]
    fn extract_sql_cases() {
        assert_eq!(extract_sql("no fences here").unwrap(), None);
        let q = extract_sql("text\n```\nSELECT 1\n```\nmore").unwrap().unwrap();
        assert_eq!(q.text, "SELECT 1");
        let q = extract_sql("```sql\nSELECT 2\n```").unwrap().unwrap();
        assert_eq!(q.text, "SELECT 2");
        let err = extract_sql("```\nSELECT 1\n```\n```\nSELECT 2\n```").unwrap_err();
        assert!(matches!(err, ResearcherError::MultipleFences(2)));
    }

    #[test]
    fn extract_sql_fence_round_trip() {
        for sql in ["SELECT 1", "SELECT a, b FROM t WHERE x = 'y'"] {
            let embedded = format!("prefix\n```\n{sql}\n```\nsuffix");
            assert_eq!(extract_sql(&embedded).unwrap().unwrap().text, sql);
        }
    }

    #[test]
    fn final_answer_cases() {
        assert_eq!(detect_final_answer("plain text").unwrap(), None);
        assert_eq!(
            detect_final_answer("<FINAL_ANSWER>report</FINAL_ANSWER>").unwrap(),
            Some("report".into())
        );
        assert!(matches!(
            detect_final_answer("<FINAL_ANSWER>no close"),
            Err(ResearcherError::UnbalancedTags)
        ));
        assert!(matches!(
            detect_final_answer("</FINAL_ANSWER>before<FINAL_ANSWER>"),
            Err(ResearcherError::UnbalancedTags)
        ));
    }

    #[test]
    fn lint_cases() {
        let limits = QueryLimits::default();
        let clean = SqlQuery::new(
            "SELECT COUNT(*) FROM orders WHERE EXTRACT(YEAR FROM order_date) = 2024",
            0,
        )
        .unwrap();
        assert!(enforce_constraints(&clean, &limits).is_empty());

        let bare = SqlQuery::new("SELECT * FROM orders", 0).unwrap();
        let findings = enforce_constraints(&bare, &limits);
        assert!(findings.contains(&Violation::MissingYearFilter));
        assert!(findings.contains(&Violation::UnboundedResult));

        let datefmt = SqlQuery::new(
            "SELECT COUNT(*) FROM orders WHERE DATE_FORMAT(order_date, '%Y') = '2024'",
            0,
        )
        .unwrap();
        assert!(enforce_constraints(&datefmt, &limits).contains(&Violation::DiscouragedDateFormat));
    }

    const QUERY_REPLY: &str = "Checking data.\n```\nSELECT COUNT(*) AS n FROM orders WHERE EXTRACT(YEAR FROM order_date) = 2024\n```";
    const FINAL_REPLY: &str = "<FINAL_ANSWER>\nThe market looks strong.\n</FINAL_ANSWER>";

    #[test]
    fn four_queries_then_final() {
        let backend = ScriptedBackend::from_texts([
            QUERY_REPLY, QUERY_REPLY, QUERY_REPLY, QUERY_REPLY, FINAL_REPLY,
        ]);
        let history = run_research(
            &brief(),
            &ResearchLimits::default(),
            &QueryLimits::default(),
            &fixture_db(),
            &backend,
            &TemplateStore::embedded(),
        )
        .unwrap();
        assert_eq!(history.executed_query_count(), 4);
        assert_eq!(history.final_report_text.as_deref(), Some("The market looks strong."));
        assert_eq!(history.turns.len(), 5);
    }

    #[test]
    fn early_final_answer_is_rejected() {
        let limits = ResearchLimits::new(2, 4, 2500).unwrap();
        let backend = ScriptedBackend::from_texts([
            FINAL_REPLY, // too early: 0 queries
            QUERY_REPLY,
            QUERY_REPLY,
            FINAL_REPLY,
        ]);
        let history = run_research(
            &brief(),
            &limits,
            &QueryLimits::default(),
            &fixture_db(),
            &backend,
            &TemplateStore::embedded(),
        )
        .unwrap();
        assert_eq!(history.executed_query_count(), 2);
        assert_eq!(history.turns.len(), 4); // rejected final + 2 queries + accepted final
        assert!(history.final_report_text.is_some());
    }

    #[test]
    fn query_budget_is_hard_capped() {
        let limits = ResearchLimits::new(1, 3, 2500).unwrap();
        // Emits queries forever; after the cap the loop demands the final answer.
        let mut texts = vec![QUERY_REPLY; 4];
        texts.push(FINAL_REPLY);
        let backend = ScriptedBackend::from_texts(texts.iter().map(|s| *s));
        let history = run_research(
            &brief(),
            &limits,
            &QueryLimits::default(),
            &fixture_db(),
            &backend,
            &TemplateStore::embedded(),
        )
        .unwrap();
        assert_eq!(history.executed_query_count(), 3);
        assert!(history.final_report_text.is_some());
    }

    #[test]
    fn noncompliance_aborts_with_partial_history() {
        let backend = ScriptedBackend::from_texts(["chatter", "more chatter", "still nothing"]);
        let err = run_research(
            &brief(),
            &ResearchLimits::default(),
            &QueryLimits::default(),
            &fixture_db(),
            &backend,
            &TemplateStore::embedded(),
        )
        .unwrap_err();
        match err {
            ResearcherError::ModelNoncompliance { partial } => {
                assert_eq!(partial.turns.len(), 3);
                assert_eq!(partial.executed_query_count(), 0);
            }
            other => panic!("expected noncompliance, got {other}"),
        }
    }

    #[test]
    fn syntax_error_becomes_feedback() {
        let backend = ScriptedBackend::from_texts([
            "```\nSELEKT broken\n```",
            QUERY_REPLY,
            QUERY_REPLY,
            QUERY_REPLY,
            QUERY_REPLY,
            FINAL_REPLY,
        ]);
        let history = run_research(
            &brief(),
            &ResearchLimits::default(),
            &QueryLimits::default(),
            &fixture_db(),
            &backend,
            &TemplateStore::embedded(),
        )
        .unwrap();
        // The broken query consumed a slot but produced no result.
        assert_eq!(history.executed_query_count(), 5);
        assert!(history.turns[0].result.is_none());
        assert!(history.turns[0].extracted_query.is_some());
    }

    #[test]
    fn replay_determinism_of_results() {
        let db = fixture_db();
        let run = || {
            let backend = ScriptedBackend::from_texts([
                QUERY_REPLY, QUERY_REPLY, QUERY_REPLY, QUERY_REPLY, FINAL_REPLY,
            ]);
            run_research(
                &brief(),
                &ResearchLimits::default(),
                &QueryLimits::default(),
                &db,
                &backend,
                &TemplateStore::embedded(),
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        for turn in &a.turns {
            if let (Some(q), Some(r)) = (&turn.extracted_query, &turn.result) {
                let rerun = data::execute(&db, q, &QueryLimits::default()).unwrap();
                assert_eq!(&rerun, r);
            }
        }
    }
}
