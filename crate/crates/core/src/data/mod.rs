//! SQL execution against a pluggable database plus the canonical JSON table
//! serialization that the researcher prompt promises for query results.
//!
//! The fixture engine is SQLite behind a small dialect shim that accepts the
//! query subset the prompts require (`EXTRACT(YEAR FROM col)`, `ROUND`,
//! `CAST`, `NULLIF`, window `SUM() OVER ()`, the usual `SELECT` clauses).
//! Anything the engine rejects comes back as `sql-syntax-error` feedback
//! text for the agent loop, never a crash.

mod dialect;
mod fixture;

pub use dialect::translate_sql;
pub use fixture::{load_fixture, DbHandle, FIXTURE_COLUMNS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("sql syntax error: {0}")]
    SqlSyntax(String),
    #[error("database io error: {0}")]
    DbIo(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("fixture parse error at line {line}: {message}")]
    FixtureParse { line: usize, message: String },
    #[error("table json parse error: {0}")]
    TableJson(String),
}

/// A single SQL statement authored by an agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SqlQuery {
    pub text: String,
    /// Which researcher turn produced it.
    pub source_round: usize,
}

impl SqlQuery {
    pub fn new(text: impl Into<String>, source_round: usize) -> Result<Self, DataError> {
        let text: String = text.into();
        if text.trim().is_empty() {
            return Err(DataError::InvalidQuery("empty query".into()));
        }
        if !dialect::is_single_statement(&text) {
            return Err(DataError::InvalidQuery(
                "multiple SQL statements are not allowed".into(),
            ));
        }
        Ok(Self { text, source_round })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TypeTag {
    Integer,
    Real,
    Text,
    Null,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub type_tag: TypeTag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CellValue {
    Null,
    Int(i64),
    Real(f64),
    Text(String),
}

impl CellValue {
    fn type_tag(&self) -> TypeTag {
        match self {
            CellValue::Null => TypeTag::Null,
            CellValue::Int(_) => TypeTag::Integer,
            CellValue::Real(_) => TypeTag::Real,
            CellValue::Text(_) => TypeTag::Text,
        }
    }
}

/// Result table for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableResult {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<CellValue>>,
    pub row_count: usize,
    pub truncated: bool,
}

impl TableResult {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.row_count != self.rows.len() {
            return Err(DataError::InvalidQuery("row_count mismatch".into()));
        }
        for row in &self.rows {
            if row.len() != self.columns.len() {
                return Err(DataError::InvalidQuery("row arity mismatch".into()));
            }
        }
        Ok(())
    }
}

/// Row cap and prompt-level data constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryLimits {
    pub max_rows: usize,
    pub required_year: Option<i32>,
}

impl Default for QueryLimits {
    fn default() -> Self {
        Self { max_rows: 200, required_year: Some(2024) }
    }
}

impl QueryLimits {
    pub fn new(max_rows: usize, required_year: Option<i32>) -> Result<Self, DataError> {
        if max_rows == 0 {
            return Err(DataError::InvalidQuery("max_rows must be positive".into()));
        }
        Ok(Self { max_rows, required_year })
    }
}

/// Execute `q` against `db`, returning at most `limits.max_rows` rows.
/// `truncated` is set iff the engine yielded more.
pub fn execute(db: &DbHandle, q: &SqlQuery, limits: &QueryLimits) -> Result<TableResult, DataError> {
    let translated = dialect::translate_sql(&q.text);
    db.query(&translated, limits.max_rows)
}

/// Canonical JSON serialization of a table result: keys ordered as columns,
/// stable number formatting. `parse_json(serialize_json(r)) == r`.
pub fn serialize_json(result: &TableResult) -> String {
    serde_json::to_string_pretty(result).expect("table serializes")
}

pub fn parse_json(text: &str) -> Result<TableResult, DataError> {
    let result: TableResult =
        serde_json::from_str(text).map_err(|e| DataError::TableJson(e.to_string()))?;
    result.validate()?;
    Ok(result)
}

pub(crate) fn column_types_from_rows(names: &[String], rows: &[Vec<CellValue>]) -> Vec<Column> {
    names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let tag = rows
                .iter()
                .map(|r| r[i].type_tag())
                .find(|t| *t != TypeTag::Null)
                .unwrap_or(TypeTag::Null);
            Column { name: name.clone(), type_tag: tag }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_multi_statement() {
        assert!(SqlQuery::new("  ", 0).is_err());
        assert!(SqlQuery::new("SELECT 1; SELECT 2", 0).is_err());
        // Trailing semicolon with only whitespace after it is fine.
        assert!(SqlQuery::new("SELECT 1;  ", 0).is_ok());
        // Semicolon inside a string literal is not a separator.
        assert!(SqlQuery::new("SELECT ';' AS c", 0).is_ok());
    }

    #[test]
    fn serialize_empty_result() {
        let r = TableResult { columns: vec![], rows: vec![], row_count: 0, truncated: false };
        let json = serialize_json(&r);
        assert!(json.contains("\"columns\": []"));
        assert!(json.contains("\"rows\": []"));
        assert_eq!(parse_json(&json).unwrap(), r);
    }

    #[test]
    fn serialize_round_trips_one_cell() {
        let r = TableResult {
            columns: vec![Column { name: "x".into(), type_tag: TypeTag::Integer }],
            rows: vec![vec![CellValue::Int(1)]],
            row_count: 1,
            truncated: false,
        };
        assert_eq!(parse_json(&serialize_json(&r)).unwrap(), r);
    }
}
