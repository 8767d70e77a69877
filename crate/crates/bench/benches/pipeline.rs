use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use kqlforge::kql::test_corpus::{
    reference_schema, DEVICE_IP_QUERY, HAS_ANY_CALL_QUERY, VALID_CORPUS,
};
use kqlforge::kql::{self, parse};
use kqlforge::pipeline::query_refine;
use kqlforge::retrieval::{Catalog, Embedder, HashingEmbedder};

fn parsing(c: &mut Criterion) {
    c.bench_function("parse corpus", |b| {
        b.iter(|| {
            for q in VALID_CORPUS {
                let _ = black_box(parse(black_box(q)));
            }
        })
    });
    let schema = reference_schema();
    c.bench_function("diagnostics device ip query", |b| {
        b.iter(|| kql::diagnostics(black_box(DEVICE_IP_QUERY), &schema))
    });
    c.bench_function("diagnostics has_any call query", |b| {
        b.iter(|| kql::diagnostics(black_box(HAS_ANY_CALL_QUERY), &schema))
    });
}

fn retrieval(c: &mut Criterion) {
    let schema = kqlforge_bench::schema();
    let embedder = HashingEmbedder::default();
    let catalog = Catalog::build(&schema, &kqlforge_bench::fsdb(), &embedder).expect("catalog");
    let query = embedder
        .embed_one("failed logons per account in the last day")
        .expect("embedding");
    c.bench_function("embed nlq", |b| {
        b.iter(|| embedder.embed_one(black_box("encoded powershell commands")))
    });
    c.bench_function("top_k tables", |b| {
        b.iter(|| catalog.tables.top_k(black_box(&query), 5))
    });
    c.bench_function("top_k values", |b| {
        b.iter(|| catalog.values.top_k(black_box(&query), 5))
    });
}

fn refinement(c: &mut Criterion) {
    let schema = kqlforge_bench::schema();
    let embedder = HashingEmbedder::default();
    let broken = "Here you go:\n```kusto\nDeviceProcessEvents\n| where timestamp > ago(1d\nwhere FileName =~ \"powershell.exe\"\n| summarize count by DEVICE_NAME\n```";
    c.bench_function("refine broken query", |b| {
        b.iter(|| query_refine(black_box(broken), &schema, &embedder, 0.9))
    });
    c.bench_function("refine valid query", |b| {
        b.iter(|| query_refine(black_box(VALID_CORPUS[4]), &schema, &embedder, 0.9))
    });
}

criterion_group!(benches, parsing, retrieval, refinement);
criterion_main!(benches);
