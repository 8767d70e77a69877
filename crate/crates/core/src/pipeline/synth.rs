//! Synthetic few-shot examples and dataset splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{FsdbExample, Theme};
use crate::error::{Error, Result};
use crate::gateway::{self, CompletionRequest, CompletionResponse, ModelBackend};
use crate::kql::{self, Diagnostic, SchemaCatalog};
use crate::prompt::Templates;
use crate::retrieval::SchemaSlice;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOptions {
    pub themes: Vec<Theme>,
    pub pairs_per_theme: usize,
    /// Pairs requested per teacher call.
    pub batch_size: usize,
    pub with_rationale: bool,
    pub model: String,
    pub temperature: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            themes: Theme::ALL.to_vec(),
            pairs_per_theme: 10,
            batch_size: 10,
            with_rationale: false,
            model: "gpt-4o".into(),
            temperature: 1.0,
        }
    }
}

/// A teacher pair rejected by the validity filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discarded {
    pub theme: Theme,
    pub nlq: String,
    pub kql: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    pub reason: String,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedBatch {
    pub theme: Theme,
    pub batch: u32,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub kept: Vec<FsdbExample>,
    pub discarded: Vec<Discarded>,
    pub failed_batches: Vec<FailedBatch>,
    pub usage: Vec<CompletionResponse>,
}

/// One pair as written by the teacher, before validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TeacherPair {
    pub nlq: String,
    pub rationale: Option<String>,
    pub kql: String,
}

/// Splits a teacher reply into pairs. Blocks are separated by `---` lines and
/// hold `NLQ:`, an optional `EXPLANATION:` and `KQL:`. Blocks missing a
/// question or a query are returned as errors.
pub fn parse_teacher_reply(text: &str) -> Vec<std::result::Result<TeacherPair, String>> {
    let mut blocks: Vec<Vec<&str>> = vec![Vec::new()];
    for line in text.lines() {
        if line.trim() == "---" {
            blocks.push(Vec::new());
        } else {
            blocks.last_mut().expect("never empty").push(line);
        }
    }
    blocks
        .into_iter()
        .filter(|b| b.iter().any(|l| !l.trim().is_empty()))
        .map(|b| parse_block(&b))
        .collect()
}

#[derive(PartialEq)]
enum Part {
    Preamble,
    Nlq,
    Explanation,
    Kql,
}

fn parse_block(lines: &[&str]) -> std::result::Result<TeacherPair, String> {
    let mut part = Part::Preamble;
    let (mut nlq, mut why, mut kql) = (Vec::new(), Vec::new(), Vec::new());
    for line in lines {
        let t = line.trim();
        if let Some(rest) = t.strip_prefix("NLQ:") {
            part = Part::Nlq;
            nlq.push(rest.trim());
        } else if let Some(rest) = t.strip_prefix("EXPLANATION:") {
            part = Part::Explanation;
            why.push(rest.trim());
        } else if let Some(rest) = t.strip_prefix("KQL:") {
            part = Part::Kql;
            kql.push(rest);
        } else {
            match part {
                Part::Preamble => {}
                Part::Nlq => nlq.push(t),
                Part::Explanation => why.push(t),
                Part::Kql => kql.push(line),
            }
        }
    }
    let nlq = nlq.join(" ").trim().to_string();
    let kql = kql::strip_model_decorations(&kql.join("\n"));
    let why = why.join("\n").trim().to_string();
    if nlq.is_empty() {
        return Err("block has no NLQ".into());
    }
    if kql.is_empty() {
        return Err(format!("block for '{nlq}' has no KQL"));
    }
    Ok(TeacherPair {
        nlq,
        rationale: (!why.is_empty()).then_some(why),
        kql,
    })
}

/// Asks `teacher` for pairs on every theme over `tables`, keeping only those
/// that parse and validate against `schema`.
pub fn synthesize_fsdb(
    schema: &SchemaCatalog,
    tables: &SchemaSlice,
    options: &SynthesisOptions,
    templates: &Templates,
    teacher: &dyn ModelBackend,
) -> Result<SynthesisReport> {
    if options.batch_size == 0 || options.pairs_per_theme == 0 {
        return Err(Error::Config(
            "pairs_per_theme and batch_size must be positive".into(),
        ));
    }
    let mut report = SynthesisReport::default();
    for &theme in &options.themes {
        let mut remaining = options.pairs_per_theme;
        let mut batch = 0u32;
        while remaining > 0 {
            let count = remaining.min(options.batch_size);
            remaining -= count;
            let prompt = templates.build_synthesis(theme, tables, count, options.with_rationale)?;
            let req = CompletionRequest::new(&options.model, prompt.rendered, options.temperature)
                .with_sample(batch);
            match gateway::complete(&req, teacher) {
                Ok(resp) => {
                    collect(&mut report, theme, &resp.text, schema);
                    report.usage.push(resp);
                }
                Err(e) if e.is_config() || matches!(e, Error::Auth(_)) => return Err(e),
                Err(e) => {
                    log::warn!("teacher batch {batch} for {theme} failed: {e}");
                    report.failed_batches.push(FailedBatch {
                        theme,
                        batch,
                        error: e.to_string(),
                    });
                }
            }
            batch += 1;
        }
    }
    if report.kept.is_empty() {
        return Err(Error::Pipeline(format!(
            "no valid pairs: {} discarded, {} failed batches",
            report.discarded.len(),
            report.failed_batches.len()
        )));
    }
    Ok(report)
}

fn collect(report: &mut SynthesisReport, theme: Theme, text: &str, schema: &SchemaCatalog) {
    for parsed in parse_teacher_reply(text) {
        match parsed {
            Err(reason) => report.discarded.push(Discarded {
                theme,
                nlq: String::new(),
                kql: String::new(),
                rationale: None,
                reason,
                diagnostics: Vec::new(),
            }),
            Ok(p) => {
                let diagnostics = kql::diagnostics(&p.kql, schema);
                if diagnostics.is_empty() {
                    report.kept.push(FsdbExample {
                        theme,
                        nlq: p.nlq,
                        kql: p.kql,
                        rationale: p.rationale,
                    });
                } else {
                    report.discarded.push(Discarded {
                        theme,
                        nlq: p.nlq,
                        kql: p.kql,
                        rationale: p.rationale,
                        reason: "invalid query".into(),
                        diagnostics,
                    });
                }
            }
        }
    }
}

/// Seeded shuffle, then the first `round(n * train_fraction)` items train.
pub fn split_dataset<T: Clone>(
    items: &[T],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    if items.len() < 2 {
        return Err(Error::Invalid(format!(
            "need at least 2 examples to split, got {}",
            items.len()
        )));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Invalid(format!(
            "train fraction {train_fraction} is outside (0, 1)"
        )));
    }
    let n = items.len();
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = order[..n_train].iter().map(|&i| items[i].clone()).collect();
    let validation = order[n_train..].iter().map(|&i| items[i].clone()).collect();
    Ok((train, validation))
}
