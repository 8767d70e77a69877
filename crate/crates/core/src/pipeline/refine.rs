//! Parser-driven repair of generated queries.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::kql::strip::STAGE_KEYWORDS;
use crate::kql::{self, Category, Diagnostic, SchemaCatalog, Token, TokenKind};
use crate::retrieval::{cosine, Embedder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairKind {
    Strip,
    CloseParen,
    RemoveParen,
    InsertPipe,
    CallParens,
    ReplaceIdentifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Repair {
    pub kind: RepairKind,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cosine: Option<f64>,
}

impl Repair {
    fn new(kind: RepairKind, detail: impl Into<String>) -> Self {
        Repair {
            kind,
            detail: detail.into(),
            cosine: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub kql: String,
    pub repairs: Vec<Repair>,
    pub diagnostics_before: Vec<Diagnostic>,
    pub diagnostics_after: Vec<Diagnostic>,
}

static STAGE_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"^(\s*)({})(\s|$)", STAGE_KEYWORDS.join("|"))).unwrap());
static BARE_COUNT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(summarize\s+(?:\w+\s*=\s*)?)count\b(\s*(?:by\b|$|,|\|))").unwrap()
});
static UNKNOWN_NAME: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^The name '([^']+)' does not refer").unwrap());

/// A syntactic rewrite; `None` when it does not apply.
type TextRepair = fn(&str) -> Option<(String, Vec<Repair>)>;

/// Repairs `candidate` in a fixed order: strip, parentheses, missing pipes
/// and call parentheses, then undefined identifiers whose nearest schema name
/// has cosine similarity at least `threshold`. The result never carries more
/// diagnostics than the input.
pub fn query_refine(
    candidate: &str,
    schema: &SchemaCatalog,
    embedder: &dyn Embedder,
    threshold: f64,
) -> Refinement {
    let before = kql::diagnostics(candidate, schema);
    let mut stages: Vec<(String, Vec<Repair>)> = vec![(candidate.to_string(), Vec::new())];

    let mut text = candidate.to_string();
    let mut repairs = Vec::new();
    let stripped = kql::strip_model_decorations(&text);
    if stripped != text {
        repairs.push(Repair::new(
            RepairKind::Strip,
            "removed text around the query",
        ));
        text = stripped;
        stages.push((text.clone(), repairs.clone()));
    }
    let steps: [TextRepair; 2] = [balance_parens, insert_missing_operators];
    for step in steps {
        if let Some((t, r)) = step(&text) {
            text = t;
            repairs.extend(r);
            stages.push((text.clone(), repairs.clone()));
        }
    }
    if let Some((t, r)) = repair_identifiers(&text, schema, embedder, threshold) {
        text = t;
        repairs.extend(r);
        stages.push((text, repairs));
    }

    // latest stage with the fewest diagnostics
    let mut best = 0;
    let mut best_diags = before.clone();
    for (i, (t, _)) in stages.iter().enumerate().skip(1) {
        let d = kql::diagnostics(t, schema);
        if d.len() <= best_diags.len() {
            best = i;
            best_diags = d;
        }
    }
    let (kql, repairs) = stages.swap_remove(best);
    Refinement {
        kql,
        repairs,
        diagnostics_before: before,
        diagnostics_after: best_diags,
    }
}

/// Closes parentheses left open at a pipe or the end of the query, and drops
/// closers that match nothing.
fn balance_parens(text: &str) -> Option<(String, Vec<Repair>)> {
    let tokens = kql::tokenize(text).ok()?;
    let mut out = String::new();
    let mut repairs = Vec::new();
    let mut last = 0;
    let mut depth = 0usize;
    let mut prev_end = 0;
    let close = |out: &mut String, depth: &mut usize, at: usize, repairs: &mut Vec<Repair>| {
        if *depth > 0 {
            out.push_str(&")".repeat(*depth));
            repairs.push(Repair::new(
                RepairKind::CloseParen,
                format!("closed {} parenthes(es) at byte {at}", *depth),
            ));
            *depth = 0;
        }
    };
    for tok in &tokens {
        if tok.kind == TokenKind::Pipe && depth > 0 {
            out.push_str(&text[last..prev_end]);
            close(&mut out, &mut depth, prev_end, &mut repairs);
            last = prev_end;
        }
        if tok.is_punct("(") {
            depth += 1;
        } else if tok.is_punct(")") {
            if depth == 0 {
                out.push_str(&text[last..tok.span.start]);
                last = tok.span.end;
                repairs.push(Repair::new(
                    RepairKind::RemoveParen,
                    format!("removed unmatched ')' at byte {}", tok.span.start),
                ));
            } else {
                depth -= 1;
            }
        }
        prev_end = tok.span.end;
    }
    out.push_str(&text[last..prev_end]);
    close(&mut out, &mut depth, prev_end, &mut repairs);
    out.push_str(&text[prev_end..]);
    (!repairs.is_empty()).then_some((out, repairs))
}

/// Adds the pipe before a stage keyword that starts a line, and the call
/// parentheses of a bare `count` aggregate.
fn insert_missing_operators(text: &str) -> Option<(String, Vec<Repair>)> {
    let mut repairs = Vec::new();
    let mut lines = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i > 0 {
            if let Some(c) = STAGE_LINE.captures(line) {
                let kw = &c[2];
                // `count` opens a stage only on its own
                if kw != "count" || line.trim() == "count" {
                    let indent = c[1].len();
                    lines.push(format!("{}| {}", &line[..indent], &line[indent..]));
                    repairs.push(Repair::new(
                        RepairKind::InsertPipe,
                        format!("inserted '|' before '{kw}' on line {}", i + 1),
                    ));
                    continue;
                }
            }
        }
        lines.push(line.to_string());
    }
    let mut out = lines.join("\n");
    if BARE_COUNT.is_match(&out) {
        out = BARE_COUNT.replace_all(&out, "${1}count()${2}").into_owned();
        repairs.push(Repair::new(
            RepairKind::CallParens,
            "wrote 'count' as 'count()'",
        ));
    }
    (!repairs.is_empty()).then_some((out, repairs))
}

fn unknown_names(diags: &[Diagnostic]) -> BTreeSet<String> {
    diags
        .iter()
        .filter(|d| d.category == Category::UnknownName)
        .filter_map(|d| UNKNOWN_NAME.captures(&d.message).map(|c| c[1].to_string()))
        .collect()
}

/// Nearest schema name to `name`, with its cosine similarity.
pub fn nearest_name(
    name: &str,
    candidates: &BTreeSet<String>,
    embedder: &dyn Embedder,
) -> Option<(String, f64)> {
    let query = embedder.embed_one(name).ok()?;
    let mut best: Option<(String, f64)> = None;
    for c in candidates {
        let Ok(v) = embedder.embed_one(c) else {
            continue;
        };
        let Ok(s) = cosine(&query, &v) else { continue };
        if best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((c.clone(), s));
        }
    }
    best
}

fn repair_identifiers(
    text: &str,
    schema: &SchemaCatalog,
    embedder: &dyn Embedder,
    threshold: f64,
) -> Option<(String, Vec<Repair>)> {
    let ast = kql::parse(text).ok()?;
    let names = unknown_names(&kql::validate_semantics(&ast, schema));
    if names.is_empty() {
        return None;
    }
    let used: BTreeSet<String> = kql::extract_shape(&ast)
        .tables
        .into_iter()
        .filter(|t| schema.columns(t).is_some())
        .collect();
    let mut candidates: BTreeSet<String> = schema.table_names().map(str::to_string).collect();
    let column_tables: Vec<&str> = if used.is_empty() {
        schema.table_names().collect()
    } else {
        used.iter().map(String::as_str).collect()
    };
    for t in column_tables {
        for c in schema.columns(t).unwrap_or_default() {
            candidates.insert(c.name.clone());
        }
    }
    let tokens: Vec<Token> = kql::tokenize(text).ok()?;
    let mut replacements = Vec::new();
    let mut repairs = Vec::new();
    for name in &names {
        let Some((to, score)) = nearest_name(name, &candidates, embedder) else {
            continue;
        };
        if score < threshold || &to == name {
            continue;
        }
        replacements.push((name.as_str(), to.clone()));
        repairs.push(Repair {
            kind: RepairKind::ReplaceIdentifier,
            detail: format!("'{name}' -> '{to}'"),
            cosine: Some(score),
        });
    }
    if replacements.is_empty() {
        return None;
    }
    let mut out = String::new();
    let mut last = 0;
    for tok in &tokens {
        if tok.kind != TokenKind::Identifier {
            continue;
        }
        if let Some((_, to)) = replacements.iter().find(|(n, _)| *n == tok.text) {
            out.push_str(&text[last..tok.span.start]);
            out.push_str(to);
            last = tok.span.end;
        }
    }
    out.push_str(&text[last..]);
    Some((out, repairs))
}
