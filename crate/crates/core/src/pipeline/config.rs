use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::LiveConfig;
use crate::prompt::PromptVariant;
use crate::retrieval::LiveEmbedderConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ZeroShot,
    Nl2kql,
    #[default]
    TwoStage,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::ZeroShot => "zero_shot",
            Mode::Nl2kql => "nl2kql",
            Mode::TwoStage => "two_stage",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero_shot" | "zero-shot" => Ok(Mode::ZeroShot),
            "nl2kql" => Ok(Mode::Nl2kql),
            "two_stage" | "two-stage" => Ok(Mode::TwoStage),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    General,
    #[default]
    Schema,
}

impl FromStr for OracleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "general" => Ok(OracleMode::General),
            "schema" => Ok(OracleMode::Schema),
            other => Err(Error::Config(format!("unknown oracle mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Models {
    pub generator: String,
    pub oracle: String,
    /// Writes synthetic few-shot pairs.
    pub teacher: String,
    /// `offline` for the built-in hashing embedder, `live` for the endpoint in `embedding`.
    pub embedder: String,
}

impl Default for Models {
    fn default() -> Self {
        Models {
            generator: "deepseek-coder-6.7b-instruct".into(),
            oracle: "gemini-2.0-flash".into(),
            teacher: "gpt-4o".into(),
            embedder: "offline".into(),
        }
    }
}

/// Input and output locations; relative paths resolve against the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub schema: Option<PathBuf>,
    pub catalog_dir: Option<PathBuf>,
    pub fsdb: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub fixtures: Option<PathBuf>,
    pub prices: Option<PathBuf>,
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub prompt_variant: PromptVariant,
    /// Tables retrieved per query; defaults to 9 for nl2kql and 5 otherwise.
    pub t: Option<usize>,
    pub v: usize,
    /// Defaults to on for nl2kql and off otherwise.
    pub include_values: Option<bool>,
    pub f: usize,
    pub n_candidates: usize,
    pub generator_temperature: f64,
    pub oracle_temperature: f64,
    pub oracle_mode: OracleMode,
    pub identifier_repair_threshold: f64,
    pub max_output_tokens: u32,
    /// Filter score when both filter sets are empty.
    pub empty_filter_score: f64,
    /// Compare filter literals case-insensitively.
    pub case_insensitive_literals: bool,
    pub workers: Option<usize>,
    pub seed: u64,
    pub models: Models,
    pub paths: Paths,
    pub live: LiveConfig,
    pub embedding: LiveEmbedderConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mode: Mode::TwoStage,
            prompt_variant: PromptVariant::default(),
            t: None,
            v: 5,
            include_values: None,
            f: 2,
            n_candidates: 1,
            generator_temperature: 1.0,
            oracle_temperature: 1.0,
            oracle_mode: OracleMode::Schema,
            identifier_repair_threshold: 0.9,
            max_output_tokens: 1024,
            empty_filter_score: 1.0,
            case_insensitive_literals: false,
            workers: None,
            seed: 0,
            models: Models::default(),
            paths: Paths::default(),
            live: LiveConfig::default(),
            embedding: LiveEmbedderConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn top_tables(&self) -> usize {
        self.t.unwrap_or(match self.mode {
            Mode::Nl2kql => 9,
            _ => 5,
        })
    }

    pub fn values_enabled(&self) -> bool {
        self.include_values.unwrap_or(self.mode == Mode::Nl2kql)
    }

    /// Reads a TOML or JSON config, chosen by extension (JSON when `.json`).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        if let Some(base) = path.parent() {
            cfg.paths.resolve_against(base);
        }
        Ok(cfg)
    }

    /// Checks the knobs that do not need the schema.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.t == Some(0) {
            return bad("t must be at least 1".into());
        }
        if self.n_candidates == 0 {
            return bad("n_candidates must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.identifier_repair_threshold) {
            return bad(format!(
                "identifier_repair_threshold {} is outside [0, 1]",
                self.identifier_repair_threshold
            ));
        }
        if !(0.0..=1.0).contains(&self.empty_filter_score) {
            return bad(format!(
                "empty_filter_score {} is outside [0, 1]",
                self.empty_filter_score
            ));
        }
        for (name, t) in [
            ("generator_temperature", self.generator_temperature),
            ("oracle_temperature", self.oracle_temperature),
        ] {
            if !(t >= 0.0 && t.is_finite()) {
                return bad(format!("{name} {t} must be a non-negative number"));
            }
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        if !matches!(self.models.embedder.as_str(), "offline" | "live") {
            return bad(format!(
                "unknown embedder '{}' (expected offline or live)",
                self.models.embedder
            ));
        }
        Ok(())
    }

    /// [`validate`](Self::validate) plus the bound of `t` by the table count.
    pub fn validate_for(&self, table_count: usize) -> Result<()> {
        self.validate()?;
        let t = self.top_tables();
        if self.mode != Mode::ZeroShot && t > table_count {
            return Err(Error::Config(format!(
                "t = {t} exceeds the {table_count} tables in the schema"
            )));
        }
        Ok(())
    }
}

impl Paths {
    fn resolve_against(&mut self, base: &Path) {
        for p in [
            &mut self.schema,
            &mut self.catalog_dir,
            &mut self.fsdb,
            &mut self.dataset,
            &mut self.fixtures,
            &mut self.prices,
            &mut self.templates,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}
