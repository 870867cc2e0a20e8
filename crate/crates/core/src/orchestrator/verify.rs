//! Fact-checking pass over a finished report: a checker agent re-queries the
//! database and lists any numbers that disagree with what the report states,
//! summarized in a `| data | reported | actual |` markdown table.

use serde::{Deserialize, Serialize};

use crate::data::{self, DbHandle, QueryLimits, SqlQuery};
use crate::gateway::{complete, Backend, ChatTranscript, ImagePart, Message, Part, Role, SamplingParams};
use crate::researcher::{fenced_blocks, ResearchHistory, ResearchLimits, EXAMPLE_SQL};
use crate::templates::{fill, TemplateId, TemplateStore};

use super::OrchestratorError;

/// Serializable wrapper around the checker's findings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub rows: Vec<DiscrepancyRow>,
}

/// One line of the checker's discrepancy table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscrepancyRow {
    pub data: String,
    pub reported: String,
    pub actual: String,
}

fn split_cells(line: &str) -> Option<Vec<String>> {
    let trimmed = line.trim();
    if !trimmed.starts_with('|') {
        return None;
    }
    let inner = trimmed.trim_start_matches('|').trim_end_matches('|');
    Some(inner.split('|').map(|c| c.trim().to_string()).collect())
}

fn is_separator(cells: &[String]) -> bool {
    cells
        .iter()
        .all(|c| !c.is_empty() && c.chars().all(|ch| ch == '-' || ch == ':'))
}

/// Extract the rows of the last `| data | reported | actual |` table in
/// `text`, skipping the separator line and `...` filler rows. Returns `None`
/// when no such table header is present.
pub fn parse_discrepancy_table(text: &str) -> Option<Vec<DiscrepancyRow>> {
    let lines: Vec<&str> = text.lines().collect();
    let header_at = lines.iter().rposition(|line| {
        split_cells(line).is_some_and(|cells| {
            cells.len() == 3
                && cells[0].eq_ignore_ascii_case("data")
                && cells[1].eq_ignore_ascii_case("reported")
                && cells[2].eq_ignore_ascii_case("actual")
        })
    })?;
    let mut rows = Vec::new();
    for line in &lines[header_at + 1..] {
        let Some(cells) = split_cells(line) else { break };
        if is_separator(&cells) {
            continue;
        }
        if cells.len() != 3 || cells[0] == "..." {
            continue;
        }
        rows.push(DiscrepancyRow {
            data: cells[0].clone(),
            reported: cells[1].clone(),
            actual: cells[2].clone(),
        });
    }
    Some(rows)
}

fn mentions_no_discrepancy(text: &str) -> bool {
    text.to_ascii_lowercase().contains("no discrepanc")
}

/// Run the checker loop over a finished report. The agent may issue up to
/// `limits.max_queries` SQL queries against `db` before being asked to
/// produce its summary table; the parsed table rows are returned.
pub fn verify_report(
    pages: &[ImagePart],
    latex: &str,
    history: &ResearchHistory,
    db: &DbHandle,
    backend: &dyn Backend,
    limits: &ResearchLimits,
    query_limits: &QueryLimits,
    store: &TemplateStore,
) -> Result<Vec<DiscrepancyRow>, OrchestratorError> {
    let template = store.text(TemplateId::Verifier)?;
    let prompt = fill(
        &template,
        &[
            ("LATEX", latex),
            ("DB_SCHEMA", &DbHandle::schema_text()),
            ("FULL_RESEARCH_HISTORY", &history.render_text()),
            ("EXAMPLE_SQL", EXAMPLE_SQL),
        ],
    )?;
    let mut parts = vec![Part::text(prompt)];
    parts.extend(pages.iter().cloned().map(Part::Image));
    let mut transcript = ChatTranscript::new();
    transcript.push(Message::new(Role::User, parts)?)?;

    let params = SamplingParams::review();
    let mut executed = 0usize;
    let mut unusable_streak = 0usize;
    // Queries plus a bounded number of corrective turns; hard upper bound so
    // a misbehaving backend cannot loop forever.
    for _ in 0..(limits.max_queries + 6) {
        let reply = complete(&transcript, &params, backend)?;
        let text = reply.joined_text();
        transcript.push(reply)?;

        if let Some(rows) = parse_discrepancy_table(&text) {
            return Ok(rows);
        }

        let fences = fenced_blocks(&text);
        if fences.is_empty() && mentions_no_discrepancy(&text) {
            return Ok(Vec::new());
        }

        let feedback = if fences.is_empty() {
            unusable_streak += 1;
            if unusable_streak >= 3 {
                return Err(OrchestratorError::VerifierParse(
                    "three consecutive replies with neither a SQL query nor a summary table"
                        .into(),
                ));
            }
            "Your reply contained neither a SQL query in triple backticks nor the final \
             `| data | reported | actual |` summary table. Continue checking or produce \
             the table."
                .to_string()
        } else if executed >= limits.max_queries {
            unusable_streak += 1;
            if unusable_streak >= 3 {
                return Err(OrchestratorError::VerifierParse(
                    "query budget exhausted and no summary table produced".into(),
                ));
            }
            "You have used your full query budget. Do not issue further queries; produce \
             the final `| data | reported | actual |` summary table now (leave the body \
             empty if everything checks out)."
                .to_string()
        } else {
            unusable_streak = 0;
            executed += 1;
            match SqlQuery::new(fences[0].as_str(), executed)
                .and_then(|query| data::execute(db, &query, query_limits))
            {
                Ok(result) => data::serialize_json(&result),
                Err(e) => format!("Query failed: {e}. Adjust the query and try again."),
            }
        };
        transcript.push(Message::text(Role::User, feedback))?;
    }
    Err(OrchestratorError::VerifierParse(
        "checker never produced a summary table within the turn budget".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_rows_and_skips_filler() {
        let text = "Found issues.\n\n| data | reported | actual |\n|------|----------|--------|\n| sales | 3000 | 4000 |\n| ... | ... | ... |\n| share | 10% | 12% |\n";
        let rows = parse_discrepancy_table(text).unwrap();
        assert_eq!(
            rows,
            vec![
                DiscrepancyRow {
                    data: "sales".into(),
                    reported: "3000".into(),
                    actual: "4000".into()
                },
                DiscrepancyRow {
                    data: "share".into(),
                    reported: "10%".into(),
                    actual: "12%".into()
                },
            ]
        );
    }

    #[test]
    fn header_only_means_empty_table() {
        let text = "All numbers check out.\n\n| data | reported | actual |\n|---|---|---|\n";
        assert_eq!(parse_discrepancy_table(text), Some(Vec::new()));
        assert_eq!(parse_discrepancy_table("no table here"), None);
    }

    #[test]
    fn scripted_checker_loop_queries_then_tables() {
        use crate::data::load_fixture;
        use crate::gateway::ScriptedBackend;
        use crate::researcher::ResearchLimits;

        let tmp = tempfile::tempdir().unwrap();
        let csv = tmp.path().join("orders.csv");
        std::fs::write(
            &csv,
            "order_id,order_date,company,product,category,price,quantity,customer_segment\n\
             1,2024-01-05,Acme,Widget,Tools,9.50,3,smb\n\
             2,2024-02-11,Acme,Widget,Tools,9.50,1,enterprise\n",
        )
        .unwrap();
        let db = load_fixture(&csv).unwrap();
        let store = TemplateStore::embedded();
        let history = ResearchHistory::default();
        let backend = ScriptedBackend::from_texts([
            "Re-checking the order count.\n```\nSELECT COUNT(*) AS n FROM orders WHERE EXTRACT(YEAR FROM order_date) = 2024\n```",
            "The report said 3 orders but the data shows 2.\n\n| data | reported | actual |\n|---|---|---|\n| orders | 3 | 2 |\n",
        ]);
        let rows = verify_report(
            &[],
            "\\begin{document}x\\end{document}",
            &history,
            &db,
            &backend,
            &ResearchLimits::default(),
            &QueryLimits::default(),
            &store,
        )
        .unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].data, "orders");
        assert_eq!(rows[0].actual, "2");
        assert_eq!(backend.remaining(), 0);
    }

    #[test]
    fn last_table_wins_and_case_is_ignored(){
        let text = "| DATA | Reported | ACTUAL |\n|---|---|---|\n| a | 1 | 2 |\nlater text\n| data | reported | actual |\n|---|---|---|\n| b | 3 | 4 |\n";
        let rows = parse_discrepancy_table(text).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].data, "b");
    }
}
