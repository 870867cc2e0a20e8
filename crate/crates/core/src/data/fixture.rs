//! Fixture database: a delimited orders file loaded into in-memory SQLite.
//!
//! The schema is a documented stand-in for a production orders table and is
//! what prompt templates receive as `{DB_SCHEMA}`.

use std::path::Path;
use std::sync::Mutex;

use rusqlite::types::ValueRef;
use rusqlite::Connection;

use super::{column_types_from_rows, CellValue, DataError, TableResult};

/// Column name / SQL type / description, injected into prompts.
pub const FIXTURE_COLUMNS: &[(&str, &str, &str)] = &[
    ("order_id", "INTEGER", "unique order identifier"),
    ("order_date", "DATE", "date the order was placed (YYYY-MM-DD)"),
    ("company", "VARCHAR", "selling company name"),
    ("product", "VARCHAR", "product name"),
    ("category", "VARCHAR", "product category"),
    ("price", "DOUBLE", "unit price"),
    ("quantity", "INTEGER", "units ordered"),
    ("customer_segment", "VARCHAR", "buyer segment"),
];

/// Handle to an immutable fixture database exposing one table `orders`.
/// Queries are serialized through an internal lock, so the handle can be
/// shared across threads.
#[derive(Debug)]
pub struct DbHandle {
    conn: Mutex<Connection>,
}

impl DbHandle {
    /// Rendered schema text for the `{DB_SCHEMA}` placeholder.
    pub fn schema_text() -> String {
        let mut out = String::from("Table `orders`:\n");
        for (name, ty, desc) in FIXTURE_COLUMNS {
            out.push_str(&format!("  - {name} ({ty}): {desc}\n"));
        }
        out
    }

    pub(super) fn query(&self, sql: &str, max_rows: usize) -> Result<TableResult, DataError> {
        let conn = self.conn.lock().unwrap();
        let mut stmt = conn
            .prepare(sql)
            .map_err(|e| DataError::SqlSyntax(e.to_string()))?;
        let names: Vec<String> = stmt.column_names().iter().map(|s| s.to_string()).collect();
        let mut rows_iter = stmt.query([]).map_err(|e| DataError::SqlSyntax(e.to_string()))?;
        let mut rows: Vec<Vec<CellValue>> = Vec::new();
        let mut truncated = false;
        loop {
            match rows_iter.next() {
                Ok(Some(row)) => {
                    if rows.len() == max_rows {
                        truncated = true;
                        break;
                    }
                    let mut cells = Vec::with_capacity(names.len());
                    for i in 0..names.len() {
                        let v = row.get_ref(i).map_err(|e| DataError::DbIo(e.to_string()))?;
                        cells.push(match v {
                            ValueRef::Null => CellValue::Null,
                            ValueRef::Integer(n) => CellValue::Int(n),
                            ValueRef::Real(f) => CellValue::Real(f),
                            ValueRef::Text(t) => CellValue::Text(
                                String::from_utf8_lossy(t).into_owned(),
                            ),
                            ValueRef::Blob(_) => CellValue::Null,
                        });
                    }
                    rows.push(cells);
                }
                Ok(None) => break,
                Err(e) => return Err(DataError::SqlSyntax(e.to_string())),
            }
        }
        let columns = column_types_from_rows(&names, &rows);
        let row_count = rows.len();
        Ok(TableResult { columns, rows, row_count, truncated })
    }
}

/// Load a delimited fixture file (CSV with a header matching the documented
/// schema) into an in-memory database.
pub fn load_fixture(path: &Path) -> Result<DbHandle, DataError> {
    let conn = Connection::open_in_memory().map_err(|e| DataError::DbIo(e.to_string()))?;
    conn.execute_batch(
        "CREATE TABLE orders (
            order_id INTEGER,
            order_date TEXT,
            company TEXT,
            product TEXT,
            category TEXT,
            price REAL,
            quantity INTEGER,
            customer_segment TEXT
        )",
    )
    .map_err(|e| DataError::DbIo(e.to_string()))?;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| DataError::FixtureParse { line: 0, message: e.to_string() })?;

    {
        let headers = reader
            .headers()
            .map_err(|e| DataError::FixtureParse { line: 1, message: e.to_string() })?;
        let expected: Vec<&str> = FIXTURE_COLUMNS.iter().map(|(n, _, _)| *n).collect();
        let got: Vec<&str> = headers.iter().collect();
        if got != expected {
            return Err(DataError::FixtureParse {
                line: 1,
                message: format!("header {got:?} does not match expected {expected:?}"),
            });
        }
    }

    let mut insert = conn
        .prepare("INSERT INTO orders VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)")
        .map_err(|e| DataError::DbIo(e.to_string()))?;

    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2; // header is line 1
        let record =
            record.map_err(|e| DataError::FixtureParse { line, message: e.to_string() })?;
        if record.len() != FIXTURE_COLUMNS.len() {
            return Err(DataError::FixtureParse {
                line,
                message: format!("expected {} fields, got {}", FIXTURE_COLUMNS.len(), record.len()),
            });
        }
        let order_id: i64 = record[0]
            .trim()
            .parse()
            .map_err(|e| DataError::FixtureParse { line, message: format!("order_id: {e}") })?;
        let price: f64 = record[5]
            .trim()
            .parse()
            .map_err(|e| DataError::FixtureParse { line, message: format!("price: {e}") })?;
        let quantity: i64 = record[6]
            .trim()
            .parse()
            .map_err(|e| DataError::FixtureParse { line, message: format!("quantity: {e}") })?;
        insert
            .execute(rusqlite::params![
                order_id,
                &record[1],
                &record[2],
                &record[3],
                &record[4],
                price,
                quantity,
                &record[7],
            ])
            .map_err(|e| DataError::DbIo(e.to_string()))?;
    }
    drop(insert);

    Ok(DbHandle { conn: Mutex::new(conn) })
}
