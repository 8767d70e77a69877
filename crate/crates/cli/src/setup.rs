//! Config resolution and construction of the shared pipeline pieces.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use kqlforge::dataset::{read_jsonl, FsdbExample, Pair};
use kqlforge::evaluation::EvalContext;
use kqlforge::gateway::{LiveBackend, ModelBackend, PriceTable, ReplayBackend, SimulatedBackend};
use kqlforge::kql::SchemaCatalog;
use kqlforge::pipeline::{Mode, PipelineConfig, Translator};
use kqlforge::prompt::Templates;
use kqlforge::retrieval::{Catalog, Embedder, HashingEmbedder, LiveEmbedder};
use kqlforge::Error;

use crate::args::{BackendChoice, Common};

/// Loads the config file (defaults when absent) and applies flag overrides.
pub fn resolve_config(c: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let paths = &mut cfg.paths;
    for (slot, flag) in [
        (&mut paths.schema, &c.schema),
        (&mut paths.catalog_dir, &c.catalog),
        (&mut paths.fsdb, &c.fsdb),
        (&mut paths.fixtures, &c.fixtures),
        (&mut paths.dataset, &c.dataset),
    ] {
        if let Some(p) = flag {
            *slot = Some(p.clone());
        }
    }
    if let Some(m) = &c.mode {
        cfg.mode = m.parse()?;
    }
    if let Some(v) = &c.prompt_variant {
        cfg.prompt_variant = v.parse()?;
    }
    if let Some(o) = &c.oracle {
        cfg.oracle_mode = o.parse()?;
    }
    cfg.t = c.t.or(cfg.t);
    cfg.f = c.f.unwrap_or(cfg.f);
    cfg.n_candidates = c.n_candidates.unwrap_or(cfg.n_candidates);
    cfg.generator_temperature = c.temperature.unwrap_or(cfg.generator_temperature);
    cfg.workers = c.workers.or(cfg.workers);
    cfg.seed = c.seed.unwrap_or(cfg.seed);
    cfg.validate()?;
    Ok(cfg)
}

pub fn require<'a>(path: &'a Option<PathBuf>, what: &str, flag: &str) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| {
        Error::Config(format!(
            "no {what}: pass --{flag} or set paths.{flag} in the config"
        ))
        .into()
    })
}

pub fn load_schema(cfg: &PipelineConfig) -> Result<SchemaCatalog> {
    let p = require(&cfg.paths.schema, "schema", "schema")?;
    Ok(SchemaCatalog::load(p)?)
}

pub fn load_fsdb(cfg: &PipelineConfig) -> Result<Vec<FsdbExample>> {
    match &cfg.paths.fsdb {
        Some(p) => Ok(read_jsonl(p)?),
        None => Ok(Vec::new()),
    }
}

pub fn load_dataset(cfg: &PipelineConfig) -> Result<Vec<Pair>> {
    let p = require(&cfg.paths.dataset, "dataset", "dataset")?;
    Ok(read_jsonl(p)?)
}

pub fn embedder(cfg: &PipelineConfig) -> Result<Box<dyn Embedder>> {
    Ok(match cfg.models.embedder.as_str() {
        "live" => Box::new(LiveEmbedder::from_env(cfg.embedding.clone())?),
        _ => Box::new(HashingEmbedder::default()),
    })
}

/// The stores from `paths.catalog_dir` when it exists, else built in memory.
pub fn catalog(
    cfg: &PipelineConfig,
    schema: &SchemaCatalog,
    embedder: &dyn Embedder,
) -> Result<Catalog> {
    let catalog = match &cfg.paths.catalog_dir {
        Some(dir) if dir.exists() => {
            let c = Catalog::load(dir)?;
            c.check_provider(embedder)?;
            c
        }
        _ => Catalog::build(schema, &load_fsdb(cfg)?, embedder)?,
    };
    if cfg.mode != Mode::ZeroShot && cfg.f > 0 && catalog.fsdb.is_empty() {
        return Err(Error::Config(
            "few-shot examples are required outside zero_shot mode: pass --fsdb".into(),
        )
        .into());
    }
    Ok(catalog)
}

pub fn templates(cfg: &PipelineConfig) -> Result<Templates> {
    Ok(match &cfg.paths.templates {
        Some(dir) => Templates::with_overrides(dir)?,
        None => Templates::builtin(),
    })
}

pub fn prices(cfg: &PipelineConfig) -> Result<PriceTable> {
    Ok(match &cfg.paths.prices {
        Some(p) => PriceTable::load(p)?,
        None => PriceTable::default(),
    })
}

/// One backend serves every role; requests carry their model id.
pub fn backend(
    choice: BackendChoice,
    cfg: &PipelineConfig,
    schema: &SchemaCatalog,
) -> Result<Box<dyn ModelBackend>> {
    Ok(match choice {
        BackendChoice::Live => Box::new(LiveBackend::from_env(cfg.live.clone())?),
        BackendChoice::Replay => {
            let p = require(&cfg.paths.fixtures, "replay fixtures", "fixtures")?;
            Box::new(ReplayBackend::load(p).with_context(|| format!("loading {}", p.display()))?)
        }
        BackendChoice::Mock => {
            let knowledge = match &cfg.paths.dataset {
                Some(p) => read_jsonl(p)?,
                None => Vec::new(),
            };
            Box::new(SimulatedBackend::new(knowledge, schema.clone()))
        }
    })
}

/// Everything a translation or evaluation borrows.
pub struct Pipeline {
    pub config: PipelineConfig,
    pub schema: SchemaCatalog,
    pub catalog: Catalog,
    pub embedder: Box<dyn Embedder>,
    pub templates: Templates,
    pub prices: PriceTable,
    pub backend: Box<dyn ModelBackend>,
}

impl Pipeline {
    pub fn new(common: &Common) -> Result<Self> {
        let config = resolve_config(common)?;
        let schema = load_schema(&config)?;
        config.validate_for(schema.table_count())?;
        let embedder = embedder(&config)?;
        let catalog = catalog(&config, &schema, embedder.as_ref())?;
        Ok(Pipeline {
            templates: templates(&config)?,
            prices: prices(&config)?,
            backend: backend(common.backend, &config, &schema)?,
            config,
            schema,
            catalog,
            embedder,
        })
    }

    pub fn translator(&self) -> Translator<'_> {
        Translator {
            config: &self.config,
            schema: &self.schema,
            catalog: &self.catalog,
            embedder: self.embedder.as_ref(),
            templates: &self.templates,
            generator: self.backend.as_ref(),
            oracle: self.backend.as_ref(),
        }
    }

    pub fn eval_context(&self) -> EvalContext<'_> {
        EvalContext {
            schema: &self.schema,
            catalog: &self.catalog,
            embedder: self.embedder.as_ref(),
            templates: &self.templates,
            generator: self.backend.as_ref(),
            oracle: self.backend.as_ref(),
            prices: &self.prices,
            workers: self.config.workers,
        }
    }
}
