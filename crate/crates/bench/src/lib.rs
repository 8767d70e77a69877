//! Benchmarks live in `benches/`; this crate only loads their inputs.

use std::path::PathBuf;

use kqlforge::dataset::{read_jsonl, FsdbExample};
use kqlforge::kql::SchemaCatalog;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

pub fn schema() -> SchemaCatalog {
    SchemaCatalog::load(fixtures().join("defender_schema.json")).expect("schema fixture")
}

pub fn fsdb() -> Vec<FsdbExample> {
    read_jsonl(fixtures().join("fsdb.jsonl")).expect("fsdb fixture")
}
