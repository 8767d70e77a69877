use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use kqlforge::dataset::{read_jsonl, write_jsonl};
use kqlforge::evaluation::{
    evaluate_repeated, run_sweep, text_table, MetricsReport, SweepGrid, Taxonomy,
};
use kqlforge::io::write_atomic;
use kqlforge::kql::Diagnostic;
use kqlforge::pipeline::{split_dataset, synthesize_fsdb, SynthesisOptions};
use kqlforge::retrieval::{Catalog, SchemaSlice};
use kqlforge::Error;

use crate::args::{self, Common};
use crate::setup::{self, Pipeline};

/// Whether every item of the run succeeded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Clean,
    ItemFailures,
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn build_catalog(common: &Common) -> Result<Status> {
    let cfg = setup::resolve_config(common)?;
    let schema = setup::load_schema(&cfg)?;
    let fsdb = setup::load_fsdb(&cfg)?;
    let embedder = setup::embedder(&cfg)?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.paths.catalog_dir.clone())
        .unwrap_or_else(|| PathBuf::from("catalog"));
    let catalog = Catalog::build(&schema, &fsdb, embedder.as_ref())?;
    catalog.save(&out)?;
    eprintln!(
        "wrote {} table, {} value and {} example entries to {}",
        catalog.tables.len(),
        catalog.values.len(),
        catalog.fsdb.len(),
        out.display()
    );
    Ok(Status::Clean)
}

pub fn fsdb_gen(common: &Common, a: &args::FsdbGen) -> Result<Status> {
    let cfg = setup::resolve_config(common)?;
    let schema = setup::load_schema(&cfg)?;
    let templates = setup::templates(&cfg)?;
    let teacher = setup::backend(common.backend, &cfg, &schema)?;
    let options = SynthesisOptions {
        pairs_per_theme: a.pairs_per_theme,
        batch_size: a.batch_size,
        with_rationale: a.rationale,
        model: cfg.models.teacher.clone(),
        ..SynthesisOptions::default()
    };
    let report = synthesize_fsdb(
        &schema,
        &SchemaSlice::full(&schema),
        &options,
        &templates,
        teacher.as_ref(),
    )?;

    let out = common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("fsdb.jsonl"));
    write_jsonl(&out, &report.kept)?;
    write_jsonl(sibling(&out, "discarded.jsonl"), &report.discarded)?;
    if !report.failed_batches.is_empty() {
        write_jsonl(sibling(&out, "failed.jsonl"), &report.failed_batches)?;
    }
    if let Some(fraction) = a.split {
        let (train, validation) = split_dataset(&report.kept, fraction, cfg.seed)?;
        write_jsonl(sibling(&out, "train.jsonl"), &train)?;
        write_jsonl(sibling(&out, "validation.jsonl"), &validation)?;
    }
    eprintln!(
        "kept {} pairs, discarded {}, {} failed batches; wrote {}",
        report.kept.len(),
        report.discarded.len(),
        report.failed_batches.len(),
        out.display()
    );
    Ok(if report.failed_batches.is_empty() {
        Status::Clean
    } else {
        Status::ItemFailures
    })
}

pub fn translate(common: &Common, a: &args::Translate) -> Result<Status> {
    let p = Pipeline::new(common)?;
    match p.translator().translate(&a.nlq) {
        Ok(t) => {
            write_json(&a.trace, &t.trace)?;
            println!("{}", t.kql);
            Ok(Status::Clean)
        }
        Err(failure) => {
            write_json(&a.trace, &failure.trace)?;
            Err(failure.error).context("translation failed")
        }
    }
}

fn report_failures(report: &MetricsReport) {
    let failed: Vec<_> = report.records.iter().filter(|r| r.failed()).collect();
    for r in failed.iter().take(5) {
        eprintln!(
            "failed: {}: {}",
            r.nlq,
            r.error.as_deref().unwrap_or("unknown error")
        );
    }
    if failed.len() > 5 {
        eprintln!("... and {} more failed records", failed.len() - 5);
    }
}

pub fn eval(common: &Common, a: &args::Eval) -> Result<Status> {
    let p = Pipeline::new(common)?;
    let dataset = setup::load_dataset(&p.config)?;
    let report = evaluate_repeated(&dataset, &p.config, &p.eval_context(), a.iterations)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    write_atomic(out.join("report.json"), report.to_json().as_bytes())?;
    let table = report.to_text_table();
    write_atomic(out.join("report.txt"), table.as_bytes())?;
    print!("{table}");
    report_failures(&report);
    Ok(if report.summary.failures == 0 {
        Status::Clean
    } else {
        Status::ItemFailures
    })
}

#[derive(Serialize)]
struct IndexEntry<'a> {
    tag: &'a str,
    n_candidates: usize,
    temperature: f64,
    t: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    summary: Option<&'a kqlforge::evaluation::Summary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

pub fn sweep(common: &Common, a: &args::Sweep) -> Result<Status> {
    let mut grid = SweepGrid::default();
    for knob in &a.knob {
        grid.set(knob)?;
    }
    if a.knob.is_empty() {
        grid = SweepGrid::full();
    }
    let p = Pipeline::new(common)?;
    let dataset = setup::load_dataset(&p.config)?;
    for (_, cfg) in grid.points(&p.config) {
        cfg.validate_for(p.schema.table_count())?;
    }
    let points = run_sweep(&grid, &p.config, &dataset, &p.eval_context(), a.iterations)?;

    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("sweep"));
    let mut index = Vec::new();
    let mut rows = Vec::new();
    let mut status = Status::Clean;
    for point in &points {
        let file = point.report.as_ref().map(|r| {
            let name = format!("{}.json", point.tag);
            (name, r)
        });
        if let Some((name, r)) = &file {
            write_atomic(out.join(name), r.to_json().as_bytes())?;
            rows.push((point.tag.clone(), &r.summary));
            if r.summary.failures > 0 {
                report_failures(r);
                status = Status::ItemFailures;
            }
        }
        if let Some(e) = &point.error {
            eprintln!("point {} failed: {e}", point.tag);
            status = Status::ItemFailures;
        }
        index.push(IndexEntry {
            tag: &point.tag,
            n_candidates: point.n_candidates,
            temperature: point.temperature,
            t: point.t,
            report: file.as_ref().map(|(n, _)| n.clone()),
            summary: point.report.as_ref().map(|r| &r.summary),
            error: point.error.as_deref(),
        });
    }
    write_json(&out.join("index.json"), &index)?;
    let table = text_table(&rows);
    write_atomic(out.join("sweep.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(status)
}

#[derive(serde::Deserialize)]
#[serde(untagged)]
enum TaxonomyLine {
    Diagnostic(Diagnostic),
    Record { diagnostics: Vec<Diagnostic> },
}

pub fn taxonomy(a: &args::Taxonomy) -> Result<Status> {
    let lines: Vec<TaxonomyLine> = read_jsonl(&a.input)?;
    let diags: Vec<Diagnostic> = lines
        .into_iter()
        .flat_map(|l| match l {
            TaxonomyLine::Diagnostic(d) => vec![d],
            TaxonomyLine::Record { diagnostics } => diagnostics,
        })
        .collect();
    let tax = Taxonomy::of(&diags);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&tax)?);
        return Ok(Status::Clean);
    }
    for (title, hist) in [("syntax", &tax.syntax), ("semantic", &tax.semantic)] {
        let total: usize = hist.values().sum();
        println!("{title} ({total})");
        let mut rows: Vec<(&String, &usize)> = hist.iter().collect();
        rows.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        for (k, v) in rows {
            println!("  {k:<width$}  {v}");
        }
    }
    Ok(Status::Clean)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(Error::from)?;
    s.push('\n');
    write_atomic(path, s.as_bytes()).with_context(|| format!("writing {}", path.display()))
}
