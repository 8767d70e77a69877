//! Scoring of generated queries against gold queries, dataset evaluation
//! reports and parameter sweeps.

mod sweep;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use sweep::{run_sweep, SweepGrid, SweepPoint};

use crate::dataset::Pair;
use crate::error::{Error, Result};
use crate::gateway::{cost_of, ModelBackend, PriceTable};
use crate::kql::{self, classify_diagnostics, Diagnostic, QueryShape, SchemaCatalog, Severity};
use crate::pipeline::{Mode, OracleMode, PipelineConfig, TranslationTrace, Translator};
use crate::prompt::{PromptVariant, Templates};
use crate::retrieval::{Catalog, Embedder};

/// 1 when the stripped text parses.
pub fn score_syntax(generated: &str) -> u8 {
    kql::parse(&kql::strip_model_decorations(generated)).is_ok() as u8
}

/// 1 when the stripped text parses and validates against `schema`.
pub fn score_semantic(generated: &str, schema: &SchemaCatalog) -> u8 {
    match kql::parse(&kql::strip_model_decorations(generated)) {
        Ok(ast) => kql::validate_semantics(&ast, schema).is_empty() as u8,
        Err(_) => 0,
    }
}

/// Share of generated tables that are gold tables, or 0 unless every gold
/// table was generated.
pub fn score_table(gold: &BTreeSet<String>, generated: &BTreeSet<String>) -> f64 {
    if generated.is_empty() || !gold.is_subset(generated) {
        return 0.0;
    }
    gold.intersection(generated).count() as f64 / generated.len() as f64
}

/// Jaccard similarity; `both_empty` when neither set has members.
pub fn score_filter(gold: &BTreeSet<String>, generated: &BTreeSet<String>, both_empty: f64) -> f64 {
    let union = gold.union(generated).count();
    if union == 0 {
        return both_empty;
    }
    gold.intersection(generated).count() as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreOptions {
    pub empty_filter_score: f64,
    pub case_insensitive_literals: bool,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            empty_filter_score: 1.0,
            case_insensitive_literals: false,
        }
    }
}

impl From<&PipelineConfig> for ScoreOptions {
    fn from(c: &PipelineConfig) -> Self {
        ScoreOptions {
            empty_filter_score: c.empty_filter_score,
            case_insensitive_literals: c.case_insensitive_literals,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub nlq: String,
    pub gold_kql: String,
    pub generated_kql: String,
    pub syntax: u8,
    pub semantic: u8,
    pub table_score: f64,
    pub filter_col: f64,
    pub filter_lit: f64,
    pub latency_seconds: f64,
    pub cost_usd: f64,
    pub diagnostics: Vec<Diagnostic>,
    /// The gold query is outside the parser subset; its shape came from the tolerant extractor.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub gold_unparsed: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub oracle_fallback: bool,
    /// The translation failed; all scores are 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EvalRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

fn gold_shape(gold: &str) -> (QueryShape, bool) {
    match kql::parse(gold) {
        Ok(ast) => (kql::extract_shape(&ast), false),
        Err(_) => (kql::extract_shape_tolerant(gold), true),
    }
}

/// Scores one generated query; latency and cost are left at 0.
pub fn score_record(
    nlq: &str,
    gold: &str,
    generated: &str,
    schema: &SchemaCatalog,
    opts: ScoreOptions,
) -> EvalRecord {
    let (mut gold_s, gold_unparsed) = gold_shape(gold);
    let query = kql::strip_model_decorations(generated);
    let (syntax, semantic, diagnostics, gen_s) = match kql::parse(&query) {
        Ok(ast) => {
            let d = kql::validate_semantics(&ast, schema);
            (1, d.is_empty() as u8, d, Some(kql::extract_shape(&ast)))
        }
        Err(d) => (0, 0, d, None),
    };
    let (table_score, filter_col, filter_lit) = match gen_s {
        Some(mut g) => {
            if opts.case_insensitive_literals {
                g = g.case_folded();
                gold_s = gold_s.case_folded();
            }
            (
                score_table(&gold_s.tables, &g.tables),
                score_filter(
                    &gold_s.filter_columns,
                    &g.filter_columns,
                    opts.empty_filter_score,
                ),
                score_filter(
                    &gold_s.filter_literals,
                    &g.filter_literals,
                    opts.empty_filter_score,
                ),
            )
        }
        None => (0.0, 0.0, 0.0),
    };
    EvalRecord {
        nlq: nlq.to_string(),
        gold_kql: gold.to_string(),
        generated_kql: generated.to_string(),
        syntax,
        semantic,
        table_score,
        filter_col,
        filter_lit,
        latency_seconds: 0.0,
        cost_usd: 0.0,
        diagnostics,
        gold_unparsed,
        oracle_fallback: false,
        error: None,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub records: usize,
    pub failures: usize,
    pub gold_unparsed: usize,
    pub syntax: f64,
    pub semantic: f64,
    pub table: f64,
    pub filter_col: f64,
    pub filter_lit: f64,
    pub mean_latency_s: f64,
    pub total_cost_usd: f64,
    pub mean_cost_usd: f64,
}

impl Summary {
    pub fn of(records: &[EvalRecord]) -> Summary {
        let n = records.len();
        let mean = |f: fn(&EvalRecord) -> f64| {
            if n == 0 {
                0.0
            } else {
                records.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let total_cost: f64 = records.iter().map(|r| r.cost_usd).sum();
        Summary {
            records: n,
            failures: records.iter().filter(|r| r.failed()).count(),
            gold_unparsed: records.iter().filter(|r| r.gold_unparsed).count(),
            syntax: mean(|r| r.syntax as f64),
            semantic: mean(|r| r.semantic as f64),
            table: mean(|r| r.table_score),
            filter_col: mean(|r| r.filter_col),
            filter_lit: mean(|r| r.filter_lit),
            mean_latency_s: mean(|r| r.latency_seconds),
            total_cost_usd: total_cost,
            mean_cost_usd: if n == 0 { 0.0 } else { total_cost / n as f64 },
        }
    }

    /// Field-wise mean of several summaries.
    pub fn mean_of(summaries: &[Summary]) -> Summary {
        let k = summaries.len().max(1) as f64;
        let avg = |f: fn(&Summary) -> f64| summaries.iter().map(f).sum::<f64>() / k;
        Summary {
            records: summaries.first().map_or(0, |s| s.records),
            failures: summaries.iter().map(|s| s.failures).sum(),
            gold_unparsed: summaries.first().map_or(0, |s| s.gold_unparsed),
            syntax: avg(|s| s.syntax),
            semantic: avg(|s| s.semantic),
            table: avg(|s| s.table),
            filter_col: avg(|s| s.filter_col),
            filter_lit: avg(|s| s.filter_lit),
            mean_latency_s: avg(|s| s.mean_latency_s),
            total_cost_usd: avg(|s| s.total_cost_usd),
            mean_cost_usd: avg(|s| s.mean_cost_usd),
        }
    }
}

/// Diagnostic counts per taxonomy key, split by severity.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub syntax: BTreeMap<String, usize>,
    pub semantic: BTreeMap<String, usize>,
}

impl Taxonomy {
    pub fn of<'a>(diags: impl IntoIterator<Item = &'a Diagnostic>) -> Taxonomy {
        let (syn, sem): (Vec<&Diagnostic>, Vec<&Diagnostic>) = diags
            .into_iter()
            .partition(|d| d.severity == Severity::Syntax);
        Taxonomy {
            syntax: classify_diagnostics(syn),
            semantic: classify_diagnostics(sem),
        }
    }
}

/// The knobs that shaped a report; paths and endpoints are left out so
/// reports compare equal across machines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub mode: Mode,
    pub prompt_variant: PromptVariant,
    pub t: usize,
    pub v: usize,
    pub include_values: bool,
    pub f: usize,
    pub n_candidates: usize,
    pub generator_temperature: f64,
    pub oracle_temperature: f64,
    pub oracle_mode: OracleMode,
    pub identifier_repair_threshold: f64,
    pub empty_filter_score: f64,
    pub case_insensitive_literals: bool,
    pub generator: String,
    pub oracle: String,
    pub embedder: String,
}

impl From<&PipelineConfig> for ConfigSnapshot {
    fn from(c: &PipelineConfig) -> Self {
        ConfigSnapshot {
            mode: c.mode,
            prompt_variant: c.prompt_variant,
            t: c.top_tables(),
            v: c.v,
            include_values: c.values_enabled(),
            f: c.f,
            n_candidates: c.n_candidates,
            generator_temperature: c.generator_temperature,
            oracle_temperature: c.oracle_temperature,
            oracle_mode: c.oracle_mode,
            identifier_repair_threshold: c.identifier_repair_threshold,
            empty_filter_score: c.empty_filter_score,
            case_insensitive_literals: c.case_insensitive_literals,
            generator: c.models.generator.clone(),
            oracle: c.models.oracle.clone(),
            embedder: c.models.embedder.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iterations {
    pub count: usize,
    pub summaries: Vec<Summary>,
    pub mean: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    pub config: ConfigSnapshot,
    pub records: Vec<EvalRecord>,
    pub summary: Summary,
    pub taxonomy: Taxonomy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<Iterations>,
}

impl MetricsReport {
    pub fn from_records(config: &PipelineConfig, records: Vec<EvalRecord>) -> Self {
        MetricsReport {
            tag: None,
            config: config.into(),
            summary: Summary::of(&records),
            taxonomy: Taxonomy::of(records.iter().flat_map(|r| &r.diagnostics)),
            records,
            iterations: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    /// Aligned text table with one summary row.
    pub fn to_text_table(&self) -> String {
        let label = self.tag.clone().unwrap_or_else(|| {
            format!(
                "{} ({}, {})",
                self.config.mode.as_str(),
                self.config.generator,
                self.config.oracle
            )
        });
        text_table(&[(label, &self.summary)])
    }
}

/// Rows of `(configuration, summary)` as an aligned text table.
pub fn text_table(rows: &[(String, &Summary)]) -> String {
    let header = [
        "Configuration",
        "Syntax",
        "Semantic",
        "Table",
        "Filter_col",
        "Filter_lit",
        "Latency",
        "Total Cost",
    ];
    let mut cells: Vec<Vec<String>> = vec![header.iter().map(|h| h.to_string()).collect()];
    for (label, s) in rows {
        cells.push(vec![
            label.clone(),
            format!("{:.3}", s.syntax),
            format!("{:.3}", s.semantic),
            format!("{:.3}", s.table),
            format!("{:.3}", s.filter_col),
            format!("{:.3}", s.filter_lit),
            format!("{:.3}", s.mean_latency_s),
            format!("${:.4}", s.total_cost_usd),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|i| {
            cells
                .iter()
                .map(|r| r[i].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for (n, row) in cells.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if n == 0 {
            let _ = writeln!(
                out,
                "{}",
                "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1))
            );
        }
    }
    out
}

/// Everything a dataset evaluation needs besides the config.
#[derive(Clone, Copy)]
pub struct EvalContext<'a> {
    pub schema: &'a SchemaCatalog,
    pub catalog: &'a Catalog,
    pub embedder: &'a dyn Embedder,
    pub templates: &'a Templates,
    pub generator: &'a dyn ModelBackend,
    pub oracle: &'a dyn ModelBackend,
    pub prices: &'a PriceTable,
    /// Worker threads; all cores when `None`.
    pub workers: Option<usize>,
}

fn models_in_use(config: &PipelineConfig) -> Vec<&str> {
    let mut m = vec![config.models.generator.as_str()];
    if config.mode == Mode::TwoStage {
        m.push(config.models.oracle.as_str());
    }
    m
}

fn evaluate_one(pair: &Pair, tr: &Translator, ctx: &EvalContext, opts: ScoreOptions) -> EvalRecord {
    let (generated, trace, error): (String, TranslationTrace, Option<String>) =
        match tr.translate(&pair.nlq) {
            Ok(t) => (t.kql, t.trace, None),
            Err(f) => (String::new(), f.trace, Some(f.error.to_string())),
        };
    let mut record = score_record(&pair.nlq, &pair.kql, &generated, ctx.schema, opts);
    if let Some(e) = error {
        record.syntax = 0;
        record.semantic = 0;
        record.table_score = 0.0;
        record.filter_col = 0.0;
        record.filter_lit = 0.0;
        record.diagnostics.clear();
        record.error = Some(e);
    }
    record.oracle_fallback = trace.oracle_fallback;
    record.latency_seconds = trace.latency_seconds;
    // models were checked against the price table up front
    record.cost_usd = cost_of(trace.responses(), ctx.prices).unwrap_or(0.0);
    record
}

/// Translates and scores every pair; record order follows `dataset`.
pub fn evaluate_dataset(
    dataset: &[Pair],
    config: &PipelineConfig,
    ctx: &EvalContext,
) -> Result<MetricsReport> {
    if dataset.is_empty() {
        return Err(Error::Invalid("dataset is empty".into()));
    }
    config.validate_for(ctx.schema.table_count())?;
    for m in models_in_use(config) {
        if ctx.prices.get(m).is_none() {
            return Err(Error::Unpriced(m.to_string()));
        }
    }
    let tr = Translator {
        config,
        schema: ctx.schema,
        catalog: ctx.catalog,
        embedder: ctx.embedder,
        templates: ctx.templates,
        generator: ctx.generator,
        oracle: ctx.oracle,
    };
    let opts = ScoreOptions::from(config);
    let work = || -> Vec<EvalRecord> {
        dataset
            .par_iter()
            .map(|p| evaluate_one(p, &tr, ctx, opts))
            .collect()
    };
    let records = match ctx.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {n} workers: {e}")))?
            .install(work),
        None => work(),
    };
    Ok(MetricsReport::from_records(config, records))
}

/// Runs the evaluation `iterations` times; records come from the first run
/// and the mean of the per-run summaries is attached.
pub fn evaluate_repeated(
    dataset: &[Pair],
    config: &PipelineConfig,
    ctx: &EvalContext,
    iterations: usize,
) -> Result<MetricsReport> {
    if iterations == 0 {
        return Err(Error::Invalid("iterations must be at least 1".into()));
    }
    let mut report = evaluate_dataset(dataset, config, ctx)?;
    if iterations > 1 {
        let mut summaries = vec![report.summary.clone()];
        for _ in 1..iterations {
            summaries.push(evaluate_dataset(dataset, config, ctx)?.summary);
        }
        report.iterations = Some(Iterations {
            count: iterations,
            mean: Summary::mean_of(&summaries),
            summaries,
        });
    }
    Ok(report)
}
