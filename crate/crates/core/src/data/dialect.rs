//! Minimal dialect shim between the prompt-facing SQL (Presto-style
//! `EXTRACT(YEAR FROM col)`) and the SQLite fixture engine.

/// True when `sql` contains exactly one statement: a `;` (outside string
/// literals) may only be followed by whitespace.
pub fn is_single_statement(sql: &str) -> bool {
    let mut in_string = false;
    let mut chars = sql.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        match c {
            '\'' => {
                if in_string && matches!(chars.peek(), Some((_, '\''))) {
                    chars.next(); // escaped quote
                } else {
                    in_string = !in_string;
                }
            }
            ';' if !in_string => {
                if sql[i + 1..].chars().any(|c| !c.is_whitespace()) {
                    return false;
                }
            }
            _ => {}
        }
    }
    true
}

/// Rewrite `EXTRACT(YEAR|MONTH|DAY FROM <expr>)` into the equivalent SQLite
/// `CAST(strftime(...) AS INTEGER)`. Everything else passes through; the
/// engine itself rejects what it cannot parse.
pub fn translate_sql(sql: &str) -> String {
    let mut out = String::with_capacity(sql.len());
    let bytes = sql.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if let Some((replacement, consumed)) = try_extract_at(&sql[i..]) {
            out.push_str(&replacement);
            i += consumed;
        } else {
            let c = sql[i..].chars().next().unwrap();
            out.push(c);
            i += c.len_utf8();
        }
    }
    out
}

/// If `rest` begins with an EXTRACT(<field> FROM <expr>) call, return the
/// rewritten text and the number of bytes consumed.
fn try_extract_at(rest: &str) -> Option<(String, usize)> {
    let upper = rest.to_uppercase();
    if !upper.starts_with("EXTRACT") {
        return None;
    }
    let after_kw = &rest[7..];
    let open_rel = after_kw.find(|c: char| !c.is_whitespace())?;
    if after_kw.as_bytes().get(open_rel) != Some(&b'(') {
        return None;
    }
    let inner_start = 7 + open_rel + 1;
    let inner_end = matching_paren(rest, inner_start - 1)?;
    let inner = &rest[inner_start..inner_end];
    let inner_upper = inner.to_uppercase();
    let from_pos = find_top_level_from(&inner_upper)?;
    let field = inner[..from_pos].trim().to_uppercase();
    let expr = inner[from_pos + 4..].trim();
    let fmt = match field.as_str() {
        "YEAR" => "%Y",
        "MONTH" => "%m",
        "DAY" => "%d",
        _ => return None,
    };
    let translated_expr = translate_sql(expr);
    Some((
        format!("CAST(strftime('{fmt}', {translated_expr}) AS INTEGER)"),
        inner_end + 1,
    ))
}

/// Byte index of the `)` matching the `(` at `open`.
fn matching_paren(s: &str, open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    for (i, c) in s.char_indices().skip_while(|(i, _)| *i < open) {
        match c {
            '\'' => in_string = !in_string,
            '(' if !in_string => depth += 1,
            ')' if !in_string => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// Position of the keyword FROM at paren depth zero in an uppercased string.
fn find_top_level_from(upper: &str) -> Option<usize> {
    let mut depth = 0usize;
    let bytes = upper.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'(' => depth += 1,
            b')' => depth = depth.saturating_sub(1),
            b'F' if depth == 0 && upper[i..].starts_with("FROM") => {
                let before_ok = i == 0 || !bytes[i - 1].is_ascii_alphanumeric();
                let after_ok = i + 4 >= bytes.len() || !bytes[i + 4].is_ascii_alphanumeric();
                if before_ok && after_ok {
                    return Some(i);
                }
            }
            _ => {}
        }
        i += 1;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn translates_extract_year() {
        let sql = "SELECT * FROM orders WHERE EXTRACT(YEAR FROM order_date) = 2024";
        assert_eq!(
            translate_sql(sql),
            "SELECT * FROM orders WHERE CAST(strftime('%Y', order_date) AS INTEGER) = 2024"
        );
    }

    #[test]
    fn translates_lowercase_and_month() {
        let sql = "select extract(month from order_date) as m from orders";
        assert!(translate_sql(sql).contains("CAST(strftime('%m', order_date) AS INTEGER)"));
    }

    #[test]
    fn nested_extract_inside_function() {
        let sql = "SELECT COUNT(*) FROM orders GROUP BY EXTRACT(YEAR FROM d)";
        let t = translate_sql(sql);
        assert!(t.ends_with("GROUP BY CAST(strftime('%Y', d) AS INTEGER)"));
        // The outer FROM clause is untouched.
        assert!(t.contains("FROM orders"));
    }

    #[test]
    fn passes_through_plain_sql() {
        let sql = "SELECT category, COUNT(*) FROM orders GROUP BY category";
        assert_eq!(translate_sql(sql), sql);
    }

    #[test]
    fn single_statement_checks() {
        assert!(is_single_statement("SELECT 1"));
        assert!(is_single_statement("SELECT 1;"));
        assert!(is_single_statement("SELECT 1;\n  "));
        assert!(!is_single_statement("SELECT 1; DROP TABLE orders"));
        assert!(is_single_statement("SELECT 'a;b' FROM t"));
        assert!(is_single_statement("SELECT 'it''s; fine' FROM t"));
    }
}
