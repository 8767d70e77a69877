use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Mode, OracleMode, PipelineConfig};
use super::refine::{query_refine, Repair};
use crate::dataset::Pair;
use crate::error::{Error, Result};
use crate::gateway::{self, CompletionRequest, CompletionResponse, ModelBackend};
use crate::kql::{self, Diagnostic, SchemaCatalog, Severity};
use crate::prompt::{PromptInstance, TemplateId, Templates};
use crate::retrieval::{refine_schema, select_few_shots, Catalog, Embedder, FewShot, SchemaSlice};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Generator,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub role: Role,
    pub template_id: TemplateId,
    pub token_estimate: usize,
    pub rendered: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub role: Role,
    pub temperature: f64,
    pub sample: u32,
    pub response: CompletionResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Everything that happened while translating one request.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TranslationTrace {
    pub nlq: String,
    pub mode: Mode,
    pub schema_slice: Option<SchemaSlice>,
    pub few_shots: Vec<FewShot>,
    /// No example fit the retrieved tables, so unfiltered examples were used.
    pub few_shot_fallback: bool,
    pub prompts: Vec<PromptRecord>,
    pub calls: Vec<CallRecord>,
    /// Generator outputs after stripping, in sample order.
    pub candidates: Vec<String>,
    pub oracle_output: Option<String>,
    /// The oracle reply was empty and the best candidate was used instead.
    pub oracle_fallback: bool,
    pub diagnostics_before: Vec<Diagnostic>,
    pub repairs: Vec<Repair>,
    pub refined_query: String,
    pub diagnostics_after: Vec<Diagnostic>,
    /// Model time: the generator call, or the slowest generator plus the oracle.
    pub latency_seconds: f64,
    /// Local wall-clock time per stage.
    pub stages: Vec<StageTiming>,
}

impl TranslationTrace {
    pub fn responses(&self) -> impl Iterator<Item = &CompletionResponse> {
        self.calls.iter().map(|c| &c.response)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Translation {
    pub kql: String,
    pub trace: TranslationTrace,
}

/// A failed translation with the trace recorded up to the failure.
#[derive(Debug)]
pub struct TranslationFailure {
    pub error: Error,
    pub trace: TranslationTrace,
}

impl fmt::Display for TranslationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for TranslationFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Shared, read-only inputs of a translation.
#[derive(Clone, Copy)]
pub struct Translator<'a> {
    pub config: &'a PipelineConfig,
    pub schema: &'a SchemaCatalog,
    pub catalog: &'a Catalog,
    pub embedder: &'a dyn Embedder,
    pub templates: &'a Templates,
    pub generator: &'a dyn ModelBackend,
    pub oracle: &'a dyn ModelBackend,
}

struct Run<'t, 'a> {
    tr: &'t Translator<'a>,
    trace: TranslationTrace,
    clock: Instant,
}

impl Run<'_, '_> {
    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.trace.stages.push(StageTiming {
            stage: stage.to_string(),
            seconds: (now - self.clock).as_secs_f64(),
        });
        self.clock = now;
    }

    fn record_prompt(&mut self, role: Role, p: &PromptInstance) {
        self.trace.prompts.push(PromptRecord {
            role,
            template_id: p.template_id,
            token_estimate: p.token_estimate,
            rendered: p.rendered.clone(),
        });
    }

    fn retrieve(&mut self, include_values: bool) -> Result<(SchemaSlice, Vec<Pair>)> {
        let cfg = self.tr.config;
        let nlq = self.trace.nlq.clone();
        let slice = refine_schema(
            &nlq,
            self.tr.embedder,
            &self.tr.catalog.tables,
            &self.tr.catalog.values,
            cfg.top_tables(),
            cfg.v,
            include_values,
        )?;
        let shots = select_few_shots(
            &nlq,
            self.tr.embedder,
            &self.tr.catalog.fsdb,
            &slice.table_names(),
            cfg.f,
        )?;
        let pairs = shots
            .examples
            .iter()
            .map(|s| Pair {
                nlq: s.nlq.clone(),
                kql: s.kql.clone(),
            })
            .collect();
        self.trace.schema_slice = Some(slice.clone());
        self.trace.few_shots = shots.examples;
        self.trace.few_shot_fallback = shots.fallback;
        self.lap("retrieval");
        Ok((slice, pairs))
    }

    fn request(
        &self,
        model: &str,
        prompt: &PromptInstance,
        temperature: f64,
        sample: u32,
    ) -> CompletionRequest {
        let mut r =
            CompletionRequest::new(model, prompt.rendered.clone(), temperature).with_sample(sample);
        r.max_output_tokens = self.tr.config.max_output_tokens;
        r
    }

    fn generate(&mut self, prompt: &PromptInstance, n: usize) -> Result<Vec<String>> {
        let cfg = self.tr.config;
        self.record_prompt(Role::Generator, prompt);
        let requests: Vec<CompletionRequest> = (0..n as u32)
            .map(|i| self.request(&cfg.models.generator, prompt, cfg.generator_temperature, i))
            .collect();
        let backend = self.tr.generator;
        let results: Vec<Result<CompletionResponse>> = requests
            .par_iter()
            .map(|r| gateway::complete(r, backend))
            .collect();
        let mut texts = Vec::with_capacity(n);
        for (req, res) in requests.iter().zip(results) {
            let resp = res?;
            texts.push(kql::strip_model_decorations(&resp.text));
            self.trace.calls.push(CallRecord {
                role: Role::Generator,
                temperature: req.temperature,
                sample: req.sample,
                response: resp,
            });
        }
        self.trace.latency_seconds = self
            .trace
            .calls
            .iter()
            .filter(|c| c.role == Role::Generator)
            .map(|c| c.response.latency_seconds)
            .fold(0.0, f64::max);
        self.trace.candidates = texts.clone();
        self.lap("generation");
        Ok(texts)
    }

    fn finish(mut self, query: String, diagnostics: Vec<Diagnostic>) -> Translation {
        self.trace.refined_query = query.clone();
        self.trace.diagnostics_after = diagnostics;
        Translation {
            kql: query,
            trace: self.trace,
        }
    }

    fn zero_shot(mut self) -> Result<Translation, Box<TranslationFailure>> {
        let prompt = self.tr.templates.build_zero_shot(&self.trace.nlq);
        let candidates = match prompt.and_then(|p| self.generate(&p, 1)) {
            Ok(c) => c,
            Err(e) => return Err(self.fail(e)),
        };
        let q = candidates.into_iter().next().unwrap_or_default();
        let d = kql::diagnostics(&q, self.tr.schema);
        self.trace.diagnostics_before = d.clone();
        Ok(self.finish(q, d))
    }

    fn nl2kql(mut self) -> Result<Translation, Box<TranslationFailure>> {
        let cfg = self.tr.config;
        let candidates = match self
            .retrieve(cfg.values_enabled())
            .and_then(|(slice, shots)| {
                let p = self.tr.templates.build_generator(
                    &self.trace.nlq,
                    &slice,
                    &shots,
                    cfg.prompt_variant,
                )?;
                self.generate(&p, 1)
            }) {
            Ok(c) => c,
            Err(e) => return Err(self.fail(e)),
        };
        let q = candidates.into_iter().next().unwrap_or_default();
        let r = query_refine(
            &q,
            self.tr.schema,
            self.tr.embedder,
            cfg.identifier_repair_threshold,
        );
        self.trace.diagnostics_before = r.diagnostics_before;
        self.trace.repairs = r.repairs;
        self.lap("refinement");
        Ok(self.finish(r.kql, r.diagnostics_after))
    }

    fn two_stage(mut self) -> Result<Translation, Box<TranslationFailure>> {
        let cfg = self.tr.config;
        let staged = self
            .retrieve(cfg.values_enabled())
            .and_then(|(slice, shots)| {
                let p = self.tr.templates.build_generator(
                    &self.trace.nlq,
                    &slice,
                    &shots,
                    cfg.prompt_variant,
                )?;
                let candidates = self.generate(&p, cfg.n_candidates)?;
                let context = (cfg.oracle_mode == OracleMode::Schema).then_some(&slice);
                let op = self
                    .tr
                    .templates
                    .build_oracle(&self.trace.nlq, &candidates, context)?;
                self.record_prompt(Role::Oracle, &op);
                let req = self.request(&cfg.models.oracle, &op, cfg.oracle_temperature, 0);
                let resp = gateway::complete(&req, self.tr.oracle)?;
                self.trace.latency_seconds += resp.latency_seconds;
                let out = kql::strip_model_decorations(&resp.text);
                self.trace.oracle_output = Some(resp.text.clone());
                self.trace.calls.push(CallRecord {
                    role: Role::Oracle,
                    temperature: req.temperature,
                    sample: 0,
                    response: resp,
                });
                self.lap("oracle");
                Ok(candidates_or(out, &candidates, self.tr.schema))
            });
        let (q, fallback) = match staged {
            Ok(x) => x,
            Err(e) => return Err(self.fail(e)),
        };
        self.trace.oracle_fallback = fallback;
        let before = kql::diagnostics(&q, self.tr.schema);
        self.trace.diagnostics_before = before.clone();
        if before.iter().any(|d| d.severity == Severity::Syntax) {
            let r = query_refine(
                &q,
                self.tr.schema,
                self.tr.embedder,
                cfg.identifier_repair_threshold,
            );
            self.trace.repairs = r.repairs;
            self.lap("refinement");
            return Ok(self.finish(r.kql, r.diagnostics_after));
        }
        Ok(self.finish(q, before))
    }

    fn fail(self, error: Error) -> Box<TranslationFailure> {
        Box::new(TranslationFailure {
            error,
            trace: self.trace,
        })
    }
}

/// The oracle's answer, or the best candidate when it answered nothing.
fn candidates_or(oracle: String, candidates: &[String], schema: &SchemaCatalog) -> (String, bool) {
    if !oracle.trim().is_empty() {
        return (oracle, false);
    }
    let best = candidates
        .iter()
        .min_by_key(|c| (kql::diagnostics(c, schema).len(), c.len()))
        .cloned()
        .unwrap_or_default();
    (best, true)
}

impl Translator<'_> {
    /// Translates one request according to the configured mode.
    pub fn translate(&self, nlq: &str) -> Result<Translation, Box<TranslationFailure>> {
        let run = Run {
            tr: self,
            trace: TranslationTrace {
                nlq: nlq.to_string(),
                mode: self.config.mode,
                ..TranslationTrace::default()
            },
            clock: Instant::now(),
        };
        match self.config.mode {
            Mode::ZeroShot => run.zero_shot(),
            Mode::Nl2kql => run.nl2kql(),
            Mode::TwoStage => run.two_stage(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FsdbExample, Theme};
    use crate::gateway::MockBackend;
    use crate::kql::{Column, ScalarType};
    use crate::retrieval::HashingEmbedder;

    fn schema() -> SchemaCatalog {
        let mut s = SchemaCatalog::new();
        for (i, name) in [
            "EmailEvents",
            "DeviceEvents",
            "IdentityLogonEvents",
            "AlertInfo",
            "DeviceFileEvents",
            "UrlClickEvents",
        ]
        .iter()
        .enumerate()
        {
            let mut cols = vec![
                Column::new("Timestamp", ScalarType::Datetime),
                Column::new("Subject", ScalarType::String),
            ];
            cols.push(Column::new(format!("Extra{i}"), ScalarType::Long));
            s.add_table(*name, cols).unwrap();
        }
        s.add_values("EmailEvents", "Subject", vec!["invoice".into()])
            .unwrap();
        s
    }

    struct Fixture {
        schema: SchemaCatalog,
        catalog: Catalog,
        embedder: HashingEmbedder,
        templates: Templates,
    }

    fn fixture() -> Fixture {
        let schema = schema();
        let embedder = HashingEmbedder::default();
        let examples = vec![FsdbExample {
            theme: Theme::Detect,
            nlq: "emails with subject invoice".into(),
            kql: "EmailEvents | where Subject == \"invoice\"".into(),
            rationale: None,
        }];
        let catalog = Catalog::build(&schema, &examples, &embedder).unwrap();
        Fixture {
            schema,
            catalog,
            embedder,
            templates: Templates::builtin(),
        }
    }

    fn run(
        cfg: &PipelineConfig,
        fx: &Fixture,
        gen: &dyn ModelBackend,
        oracle: &dyn ModelBackend,
    ) -> Result<Translation, Box<TranslationFailure>> {
        Translator {
            config: cfg,
            schema: &fx.schema,
            catalog: &fx.catalog,
            embedder: &fx.embedder,
            templates: &fx.templates,
            generator: gen,
            oracle,
        }
        .translate("show emails about invoices")
    }

    #[test]
    fn zero_shot_makes_one_call() {
        let fx = fixture();
        let cfg = PipelineConfig {
            mode: Mode::ZeroShot,
            ..PipelineConfig::default()
        };
        let m = MockBackend::echo("EmailEvents | take 5");
        let t = run(&cfg, &fx, &m, &m).unwrap();
        assert_eq!(t.kql, "EmailEvents | take 5");
        assert_eq!(t.trace.calls.len(), 1);
        assert_eq!(t.trace.prompts[0].template_id, TemplateId::ZeroShot);
        assert!(t.trace.schema_slice.is_none());
    }

    #[test]
    fn nl2kql_uses_t_tables_and_refines() {
        let fx = fixture();
        let cfg = PipelineConfig {
            mode: Mode::Nl2kql,
            t: Some(5),
            ..PipelineConfig::default()
        };
        let m = MockBackend::echo("```kusto\nEmailEvents\n| where (subject has \"invoice\"\n```");
        let t = run(&cfg, &fx, &m, &m).unwrap();
        assert_eq!(t.trace.schema_slice.as_ref().unwrap().len(), 5);
        assert_eq!(t.kql, "EmailEvents\n| where (Subject has \"invoice\")");
        assert!(t.trace.diagnostics_after.is_empty());
        assert!(!t.trace.repairs.is_empty());
        assert_eq!(t.trace.few_shots.len(), 1);
    }

    #[test]
    fn two_stage_latency_is_slowest_generator_plus_oracle() {
        let fx = fixture();
        let cfg = PipelineConfig {
            n_candidates: 3,
            ..PipelineConfig::default()
        };
        let gen = MockBackend::from_fn(|r| Ok(format!("EmailEvents | take {}", r.sample + 1)))
            .with_latency(0.5);
        let oracle = MockBackend::echo("```\nEmailEvents | take 2\n```").with_latency(0.25);
        let t = run(&cfg, &fx, &gen, &oracle).unwrap();
        assert_eq!(t.kql, "EmailEvents | take 2");
        assert_eq!(t.trace.calls.len(), 4);
        assert_eq!(
            t.trace.candidates,
            [
                "EmailEvents | take 1",
                "EmailEvents | take 2",
                "EmailEvents | take 3"
            ]
        );
        assert!((t.trace.latency_seconds - 0.75).abs() < 1e-12);
        assert!(t.trace.prompts[1]
            .rendered
            .contains("You may use the following tables and columns:"));
    }

    #[test]
    fn general_oracle_gets_no_schema() {
        let fx = fixture();
        let cfg = PipelineConfig {
            oracle_mode: OracleMode::General,
            ..PipelineConfig::default()
        };
        let m = MockBackend::echo("EmailEvents | take 5");
        let t = run(&cfg, &fx, &m, &m).unwrap();
        assert_eq!(t.trace.prompts[1].template_id, TemplateId::OracleGeneral);
    }

    #[test]
    fn empty_oracle_reply_falls_back() {
        let fx = fixture();
        let cfg = PipelineConfig {
            n_candidates: 2,
            ..PipelineConfig::default()
        };
        let gen = MockBackend::from_fn(|r| {
            Ok(if r.sample == 0 {
                "EmailEvents | where Nope == 1".into()
            } else {
                "EmailEvents | take 9".into()
            })
        });
        let oracle = MockBackend::echo("   ");
        let t = run(&cfg, &fx, &gen, &oracle).unwrap();
        assert!(t.trace.oracle_fallback);
        assert_eq!(t.kql, "EmailEvents | take 9");
    }

    #[test]
    fn backend_error_keeps_trace() {
        let fx = fixture();
        let cfg = PipelineConfig::default();
        let gen = MockBackend::echo("EmailEvents | take 1");
        let oracle = MockBackend::from_fn(|_| {
            Err(Error::Backend {
                attempts: 1,
                cause: "down".into(),
            })
        });
        let f = run(&cfg, &fx, &gen, &oracle).unwrap_err();
        assert_eq!(f.trace.calls.len(), 1);
        assert!(f.to_string().contains("down"));
    }

    #[test]
    fn unparseable_output_is_returned() {
        let fx = fixture();
        let cfg = PipelineConfig::default();
        let m = MockBackend::echo("I cannot help with that.");
        let t = run(&cfg, &fx, &m, &m).unwrap();
        assert_eq!(t.kql, "I cannot help with that.");
        assert!(!t.trace.diagnostics_after.is_empty());
    }
}
