//! Records the shipped replay fixture by running the default evaluation, the
//! other modes, the full sweep grid, a table-count sweep and FSDB synthesis
//! against the simulated backend.
//!
//! cargo run -p kqlforge --example capture_replay -- [fixtures-dir]

use std::path::PathBuf;

use kqlforge::dataset::{read_jsonl, FsdbExample, Pair};
use kqlforge::evaluation::{evaluate_dataset, run_sweep, EvalContext, SweepGrid};
use kqlforge::gateway::{PriceTable, RecordingBackend, SimulatedBackend};
use kqlforge::kql::SchemaCatalog;
use kqlforge::pipeline::{synthesize_fsdb, Mode, PipelineConfig, SynthesisOptions};
use kqlforge::prompt::Templates;
use kqlforge::retrieval::{Catalog, HashingEmbedder, SchemaSlice};

fn main() -> anyhow::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures"));
    let schema = SchemaCatalog::load(dir.join("defender_schema.json"))?;
    let pairs: Vec<Pair> = read_jsonl(dir.join("defender_eval20.jsonl"))?;
    let fsdb: Vec<FsdbExample> = read_jsonl(dir.join("fsdb.jsonl"))?;
    let embedder = HashingEmbedder::default();
    let catalog = Catalog::build(&schema, &fsdb, &embedder)?;
    let templates = Templates::builtin();
    let prices = PriceTable::default();

    let recorder = RecordingBackend::new(SimulatedBackend::new(pairs.clone(), schema.clone()));
    let ctx = EvalContext {
        schema: &schema,
        catalog: &catalog,
        embedder: &embedder,
        templates: &templates,
        generator: &recorder,
        oracle: &recorder,
        prices: &prices,
        workers: None,
    };

    let base = PipelineConfig::default();
    for mode in [Mode::TwoStage, Mode::Nl2kql, Mode::ZeroShot] {
        let cfg = PipelineConfig {
            mode,
            ..base.clone()
        };
        let r = evaluate_dataset(&pairs, &cfg, &ctx)?;
        println!("{}\n{}", mode.as_str(), r.to_text_table());
    }
    let points = run_sweep(&SweepGrid::full(), &base, &pairs, &ctx, 1)?;
    println!("sweep: {} points", points.len());
    let mut tables_only = SweepGrid::default();
    tables_only.set("t=1,3,5,7,9")?;
    let points = run_sweep(&tables_only, &base, &pairs, &ctx, 1)?;
    println!("table sweep: {} points", points.len());

    let slice = SchemaSlice::full(&schema);
    for with_rationale in [false, true] {
        let opts = SynthesisOptions {
            with_rationale,
            ..SynthesisOptions::default()
        };
        let r = synthesize_fsdb(&schema, &slice, &opts, &templates, &recorder)?;
        println!(
            "synthesis (rationale={with_rationale}): {} kept, {} discarded",
            r.kept.len(),
            r.discarded.len()
        );
    }

    let out = dir.join("replay").join("defender_eval20.jsonl");
    std::fs::create_dir_all(out.parent().expect("has parent"))?;
    let n = recorder.save(&out)?;
    println!("wrote {n} fixtures to {}", out.display());
    Ok(())
}
