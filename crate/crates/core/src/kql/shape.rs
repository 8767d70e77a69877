//! Structural extraction of tables, filter columns and filter literals.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use chrono::NaiveDateTime;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::ast::*;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryShape {
    pub tables: BTreeSet<String>,
    pub filter_columns: BTreeSet<String>,
    pub filter_literals: BTreeSet<String>,
}

impl QueryShape {
    /// Copy with every literal lowercased, for case-insensitive comparison.
    pub fn case_folded(&self) -> QueryShape {
        QueryShape {
            tables: self.tables.clone(),
            filter_columns: self.filter_columns.clone(),
            filter_literals: self
                .filter_literals
                .iter()
                .map(|l| l.to_lowercase())
                .collect(),
        }
    }
}

/// Tables from every source, columns and literals from where predicates and
/// join keys.
pub fn extract_shape(ast: &QueryAst) -> QueryShape {
    let mut shape = QueryShape {
        tables: ast.sources.iter().cloned().collect(),
        ..QueryShape::default()
    };
    ast.pipeline.walk_pipelines(&mut |p| {
        for stage in &p.stages {
            match stage {
                Stage::Where(e) => collect_predicate(e, &mut shape),
                Stage::Join(j) => {
                    for key in &j.on {
                        match key {
                            JoinKey::Same(id) => {
                                shape.filter_columns.insert(id.name.clone());
                            }
                            JoinKey::Sides { left, right } => {
                                shape.filter_columns.insert(left.name.clone());
                                shape.filter_columns.insert(right.name.clone());
                            }
                        }
                    }
                }
                _ => {}
            }
        }
    });
    shape
}

fn collect_predicate(e: &Expr, shape: &mut QueryShape) {
    e.walk(&mut |node| match node {
        Expr::Column(id) if !id.name.starts_with('$') => {
            shape.filter_columns.insert(id.name.clone());
        }
        Expr::Literal(l) => {
            shape
                .filter_literals
                .insert(normalize_literal(l.kind, &l.text));
        }
        _ => {}
    });
}

/// Canonical text of a literal: strings unquoted and trimmed, numbers in
/// canonical decimal form, timespans lowercased, datetimes as ISO-8601.
pub fn normalize_literal(kind: LiteralKind, text: &str) -> String {
    match kind {
        LiteralKind::String => unquote(text).trim().to_string(),
        LiteralKind::Int => match text.parse::<i128>() {
            Ok(n) => n.to_string(),
            Err(_) => text.to_string(),
        },
        LiteralKind::Real => match text.parse::<f64>() {
            Ok(x) if x.is_finite() => x.to_string(),
            _ => text.to_string(),
        },
        LiteralKind::Timespan => text.to_ascii_lowercase(),
        LiteralKind::Datetime => normalize_datetime(text),
        LiteralKind::Bool => text.to_ascii_lowercase(),
    }
}

fn unquote(text: &str) -> String {
    let (verbatim, body) = match text.strip_prefix('@') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let mut chars = body.chars();
    let quote = match chars.next() {
        Some(q @ ('"' | '\'')) => q,
        _ => return text.to_string(),
    };
    let inner = body[1..].strip_suffix(quote).unwrap_or(&body[1..]);
    if verbatim {
        let doubled: String = [quote, quote].iter().collect();
        return inner.replace(&doubled, &quote.to_string());
    }
    let mut out = String::with_capacity(inner.len());
    let mut it = inner.chars();
    while let Some(c) = it.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match it.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

const DATETIME_FORMATS: &[&str] = &[
    "%Y-%m-%dT%H:%M:%S%.fZ",
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%d %H:%M:%S%.fZ",
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%dT%H:%MZ",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
];

fn normalize_datetime(text: &str) -> String {
    let body = text
        .trim()
        .strip_prefix("datetime")
        .map(str::trim_start)
        .and_then(|s| s.strip_prefix('('))
        .and_then(|s| s.strip_suffix(')'))
        .unwrap_or(text);
    let body = unquote(body.trim());
    let body = body.trim();
    let parsed = DATETIME_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(body, f).ok())
        .or_else(|| {
            let date = body.strip_suffix('Z').unwrap_or(body);
            chrono::NaiveDate::parse_from_str(date, "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        });
    match parsed {
        Some(dt) => dt.format("%Y-%m-%dT%H:%M:%S%.fZ").to_string(),
        None => body.to_string(),
    }
}

static LEADING_TABLE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*([A-Za-z_][A-Za-z0-9_]*)").unwrap());
static JOIN_TABLE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\bjoin\b(?:\s+kind\s*=\s*\w+)?\s*\(?\s*([A-Za-z_][A-Za-z0-9_]*)").unwrap()
});
static UNION_LIST: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\bunion\b(?:\s+kind\s*=\s*\w+)?((?:\s*,?\s*\(?\s*[A-Za-z_][A-Za-z0-9_]*)+)")
        .unwrap()
});
static IDENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[A-Za-z_][A-Za-z0-9_]*").unwrap());
static FILTER_COLUMN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"([A-Za-z_][A-Za-z0-9_]*)\s*(?:==|!=|=~|!~|<=|>=|<|>|!?contains(?:_cs)?\b|!?has(?:_cs|_any|_all)?\b|!?in~?\s*\(|!?startswith\b|!?endswith\b|!?between\b|matches\s+regex\b)",
    )
    .unwrap()
});
static ON_COLUMNS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\bon\s+(.+)$").unwrap());
static STRING_LIT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"@?"(?:[^"\\]|\\.)*"|@?'(?:[^'\\]|\\.)*'"#).unwrap());
static DATETIME_LIT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"datetime\s*\([^)]*\)").unwrap());
static TIMESPAN_LIT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b\d+(?:ms|d|h|m|s)\b").unwrap());
static NUMBER_LIT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?:^|[^A-Za-z0-9_.])(-?\d+(?:\.\d+)?)\b").unwrap());

/// Best-effort shape for text outside the parser's subset.
pub fn extract_shape_tolerant(text: &str) -> QueryShape {
    let mut shape = QueryShape::default();
    let segments = split_pipes(text);
    if let Some(first) = segments.first() {
        if let Some(c) = LEADING_TABLE.captures(first) {
            let name = &c[1];
            if name != "union" {
                shape.tables.insert(name.to_string());
            }
        }
    }
    for c in JOIN_TABLE.captures_iter(text) {
        shape.tables.insert(c[1].to_string());
    }
    for c in UNION_LIST.captures_iter(text) {
        for id in IDENT.find_iter(&c[1]) {
            if id.as_str() != "kind" {
                shape.tables.insert(id.as_str().to_string());
            }
        }
    }
    for seg in &segments {
        let trimmed = seg.trim_start();
        if trimmed.starts_with("where ") || trimmed.starts_with("where\n") {
            collect_tolerant_predicate(&trimmed[5..], &mut shape);
        } else if trimmed.starts_with("join") {
            if let Some(c) = ON_COLUMNS.captures(trimmed) {
                for id in IDENT.find_iter(&c[1]) {
                    let name = id.as_str();
                    if name != "left" && name != "right" {
                        shape.filter_columns.insert(name.to_string());
                    }
                }
            }
        }
    }
    shape
}

fn collect_tolerant_predicate(pred: &str, shape: &mut QueryShape) {
    for m in STRING_LIT.find_iter(pred) {
        shape
            .filter_literals
            .insert(normalize_literal(LiteralKind::String, m.as_str()));
    }
    let without_strings = STRING_LIT.replace_all(pred, " ");
    for m in DATETIME_LIT.find_iter(pred) {
        shape
            .filter_literals
            .insert(normalize_literal(LiteralKind::Datetime, m.as_str()));
    }
    let rest = DATETIME_LIT.replace_all(&without_strings, " ");
    for c in FILTER_COLUMN.captures_iter(&rest) {
        let name = &c[1];
        if !matches!(name, "and" | "or" | "not") {
            shape.filter_columns.insert(name.to_string());
        }
    }
    for m in TIMESPAN_LIT.find_iter(&rest) {
        shape
            .filter_literals
            .insert(normalize_literal(LiteralKind::Timespan, m.as_str()));
    }
    let rest = TIMESPAN_LIT.replace_all(&rest, " ");
    for c in NUMBER_LIT.captures_iter(&rest) {
        let n = &c[1];
        let kind = if n.contains('.') {
            LiteralKind::Real
        } else {
            LiteralKind::Int
        };
        shape.filter_literals.insert(normalize_literal(kind, n));
    }
}

/// Split on pipes that are outside string literals.
fn split_pipes(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for (i, c) in text.char_indices() {
        match quote {
            Some(q) => {
                if escaped {
                    escaped = false;
                } else if c == '\\' {
                    escaped = true;
                } else if c == q {
                    quote = None;
                }
            }
            None => match c {
                '"' | '\'' => quote = Some(c),
                '|' => {
                    out.push(&text[start..i]);
                    start = i + 1;
                }
                _ => {}
            },
        }
    }
    out.push(&text[start..]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kql::parse;
    use crate::kql::test_corpus::*;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn device_ip_query_shape() {
        let s = extract_shape(&parse(DEVICE_IP_QUERY).unwrap());
        assert_eq!(s.tables, set(&["DeviceNetworkEvents"]));
        assert_eq!(
            s.filter_columns,
            set(&["Timestamp", "ActionType", "LocalIP"])
        );
        assert_eq!(
            s.filter_literals,
            set(&["7d", "ConnectionSuccess", "89.12.55.1"])
        );
    }

    #[test]
    fn phish_window_query_shape() {
        let s = extract_shape(&parse(PHISH_WINDOW_QUERY).unwrap());
        assert_eq!(s.tables, set(&["EmailEvents"]));
        assert_eq!(
            s.filter_columns,
            set(&["Timestamp", "ThreatTypes", "EmailActionPolicy"])
        );
        assert_eq!(
            s.filter_literals,
            set(&[
                "2022-10-05T20:54:33Z",
                "2022-10-05T21:05:12Z",
                "Phish",
                "Anti-phishing user impersonation"
            ])
        );
    }

    #[test]
    fn bare_and_quoted_datetimes_agree() {
        let a = extract_shape(&parse(PHISH_WINDOW_QUERY).unwrap());
        let b = extract_shape(&parse(HAS_ANY_CALL_QUERY).unwrap());
        assert!(a.filter_literals.contains("2022-10-05T20:54:33Z"));
        assert!(b.filter_literals.contains("2022-10-05T20:54:33Z"));
        assert!(b.filter_literals.contains("2022-10-05T21:05:12Z"));
    }

    #[test]
    fn no_filters() {
        let s = extract_shape(&parse("T | take 5").unwrap());
        assert_eq!(s.tables, set(&["T"]));
        assert!(s.filter_columns.is_empty());
        assert!(s.filter_literals.is_empty());
    }

    #[test]
    fn joins_and_unions_contribute_tables_and_keys() {
        let s = extract_shape(
            &parse("AlertInfo | join kind=inner (AlertEvidence | where EntityType == \"File\") on $left.AlertId == $right.AlertId2").unwrap(),
        );
        assert_eq!(s.tables, set(&["AlertInfo", "AlertEvidence"]));
        assert_eq!(
            s.filter_columns,
            set(&["AlertId", "AlertId2", "EntityType"])
        );
        let s = extract_shape(&parse("union A, B | where X == 1").unwrap());
        assert_eq!(s.tables, set(&["A", "B"]));
    }

    #[test]
    fn literal_normalization() {
        use LiteralKind::*;
        assert_eq!(normalize_literal(String, "\"  a b \""), "a b");
        assert_eq!(normalize_literal(String, "'x'"), "x");
        assert_eq!(normalize_literal(String, "@\"C:\\Users\""), "C:\\Users");
        assert_eq!(
            normalize_literal(String, "\"say \\\"hi\\\"\""),
            "say \"hi\""
        );
        assert_eq!(normalize_literal(Int, "007"), "7");
        assert_eq!(normalize_literal(Real, "1.50"), "1.5");
        assert_eq!(normalize_literal(Timespan, "7D"), "7d");
        assert_eq!(
            normalize_literal(Datetime, "datetime(2024-01-01)"),
            "2024-01-01T00:00:00Z"
        );
        assert_eq!(
            normalize_literal(Datetime, "datetime(\"2024-01-01 10:00:00.5\")"),
            "2024-01-01T10:00:00.500Z"
        );
    }

    #[test]
    fn shape_soundness_over_corpus() {
        for src in VALID_CORPUS {
            let ast = parse(src).unwrap();
            let s = extract_shape(&ast);
            for t in &s.tables {
                assert!(ast.sources.contains(t));
            }
            for c in &s.filter_columns {
                assert!(src.contains(c.as_str()), "{c} not in {src}");
            }
        }
    }

    #[test]
    fn tolerant_matches_parser_on_simple_queries() {
        for src in [DEVICE_IP_QUERY, PHISH_WINDOW_QUERY, "EmailEvents | take 5"] {
            assert_eq!(
                extract_shape_tolerant(src),
                extract_shape(&parse(src).unwrap()),
                "{src}"
            );
        }
    }

    #[test]
    fn tolerant_handles_unsupported_operators() {
        let s = extract_shape_tolerant(
            "DeviceEvents | where ActionType == \"X\" | project-away Foo | join kind=inner DeviceInfo on DeviceId",
        );
        assert_eq!(s.tables, set(&["DeviceEvents", "DeviceInfo"]));
        assert_eq!(s.filter_columns, set(&["ActionType", "DeviceId"]));
        assert_eq!(s.filter_literals, set(&["X"]));
    }
}
