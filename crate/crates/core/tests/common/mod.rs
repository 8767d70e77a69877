#![allow(dead_code)]

use std::path::PathBuf;

use kqlforge::dataset::{read_jsonl, FsdbExample, Pair};
use kqlforge::kql::SchemaCatalog;
use kqlforge::retrieval::{Catalog, HashingEmbedder};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn schema() -> SchemaCatalog {
    SchemaCatalog::load(fixtures().join("defender_schema.json")).expect("schema fixture")
}

pub fn eval_pairs() -> Vec<Pair> {
    read_jsonl(fixtures().join("defender_eval20.jsonl")).expect("eval fixture")
}

pub fn fsdb() -> Vec<FsdbExample> {
    read_jsonl(fixtures().join("fsdb.jsonl")).expect("fsdb fixture")
}

pub fn catalog() -> Catalog {
    Catalog::build(&schema(), &fsdb(), &HashingEmbedder::default()).expect("catalog")
}

use kqlforge::dataset::Theme;
use kqlforge::kql::{Column, ScalarType};
use kqlforge::prompt::{PromptInstance, TemplateId, Templates};
use kqlforge::retrieval::{SchemaSlice, SliceTable, SliceValue};

pub fn goldens_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("goldens")
}

/// Phrase each rendered template must contain.
pub fn guardrail(id: TemplateId) -> &'static str {
    match id {
        TemplateId::ZeroShot => "Return only the KQL code without any explanation.",
        TemplateId::Nl2kql => "Return only the KQL query.",
        TemplateId::Alt1 | TemplateId::Alt2 => "ONLY in infix form",
        TemplateId::OracleGeneral | TemplateId::OracleSchema => {
            "determine which of the following KQL queries"
        }
        TemplateId::FsdbSynth => "distinct pairs",
        TemplateId::CotRationale => "EXPLANATION:",
    }
}

fn golden_slice() -> SchemaSlice {
    SchemaSlice {
        tables: vec![
            SliceTable {
                name: "EmailEvents".into(),
                columns: vec![
                    Column::new("Timestamp", ScalarType::Datetime),
                    Column::new("Subject", ScalarType::String),
                    Column::new("ThreatTypes", ScalarType::String),
                ],
                values: vec![SliceValue {
                    column: "ThreatTypes".into(),
                    value: "Phish".into(),
                }],
            },
            SliceTable {
                name: "DeviceNetworkEvents".into(),
                columns: vec![
                    Column::new("Timestamp", ScalarType::Datetime),
                    Column::new("DeviceId", ScalarType::String),
                    Column::new("RemotePort", ScalarType::Int),
                ],
                values: Vec::new(),
            },
        ],
    }
}

/// Fixed inputs rendered through every template.
pub fn golden_prompts() -> Vec<(TemplateId, PromptInstance)> {
    let t = Templates::builtin();
    let nlq = "Phishing emails received in the last day";
    let slice = golden_slice();
    let examples = vec![Pair {
        nlq: "Connections to port 3389".into(),
        kql: "DeviceNetworkEvents\n| where RemotePort == 3389".into(),
    }];
    let candidates = vec![
        "EmailEvents | where ThreatTypes has \"Phish\"".to_string(),
        "EmailEvents | where has_any(ThreatTypes, \"Phish\")".to_string(),
    ];
    let mut out = Vec::new();
    for id in TemplateId::ALL {
        let p = match id {
            TemplateId::ZeroShot => t.build_zero_shot(nlq),
            TemplateId::Nl2kql => t.build_generator(
                nlq,
                &slice,
                &examples,
                kqlforge::prompt::PromptVariant::Original,
            ),
            TemplateId::Alt1 => t.build_alternative(nlq, &slice, &examples, 1),
            TemplateId::Alt2 => t.build_alternative(nlq, &slice, &examples, 2),
            TemplateId::OracleGeneral => t.build_oracle(nlq, &candidates, None),
            TemplateId::OracleSchema => t.build_oracle(nlq, &candidates, Some(&slice)),
            TemplateId::FsdbSynth => t.build_synthesis(Theme::Detect, &slice, 3, false),
            TemplateId::CotRationale => t.build_synthesis(Theme::Detect, &slice, 3, true),
        };
        out.push((id, p.expect("golden render")));
    }
    out
}
