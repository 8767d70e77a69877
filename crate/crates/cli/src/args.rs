use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "kqlforge",
    version,
    about = "Translate natural-language requests into KQL and evaluate the results"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum BackendChoice {
    /// OpenAI-compatible endpoint; key from KQLFORGE_API_KEY.
    Live,
    /// Recorded responses from the fixtures file.
    #[default]
    Replay,
    /// Offline simulator that answers from the dataset's gold queries.
    Mock,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML or JSON pipeline config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = BackendChoice::Replay)]
    pub backend: BackendChoice,
    /// Schema JSON; overrides `paths.schema`.
    #[arg(long, global = true)]
    pub schema: Option<PathBuf>,
    /// Directory of embedding stores; overrides `paths.catalog_dir`.
    #[arg(long, global = true)]
    pub catalog: Option<PathBuf>,
    /// Few-shot examples JSONL; overrides `paths.fsdb`.
    #[arg(long, global = true)]
    pub fsdb: Option<PathBuf>,
    /// Replay fixtures JSONL; overrides `paths.fixtures`.
    #[arg(long, global = true)]
    pub fixtures: Option<PathBuf>,
    /// Evaluation pairs JSONL; overrides `paths.dataset`.
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// zero_shot, nl2kql or two_stage.
    #[arg(long, global = true)]
    pub mode: Option<String>,
    /// original, alt1 or alt2.
    #[arg(long, global = true)]
    pub prompt_variant: Option<String>,
    /// Number of tables retrieved for the prompt
    #[arg(long, global = true)]
    pub t: Option<usize>,
    /// Number of few-shot examples
    #[arg(long, global = true)]
    pub f: Option<usize>,
    /// Generator samples per request
    #[arg(long, global = true)]
    pub n_candidates: Option<usize>,
    /// Generator temperature.
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    /// Oracle context: general or schema.
    #[arg(long, global = true)]
    pub oracle: Option<String>,
    /// Parallel evaluation workers
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Seed for sampling and dataset splits
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Embed the schema, its column values and the few-shot examples into store files.
    BuildCatalog,
    /// Ask the teacher model for example pairs and keep the valid ones.
    FsdbGen(FsdbGen),
    /// Translate one request; prints the KQL and writes the trace.
    Translate(Translate),
    /// Evaluate a dataset and write a report.
    Eval(Eval),
    /// Evaluate every point of a hyperparameter grid.
    Sweep(Sweep),
    /// Histogram of diagnostic categories from a JSONL file.
    Taxonomy(Taxonomy),
}

#[derive(Debug, Args)]
pub struct FsdbGen {
    #[arg(long, default_value_t = 10)]
    pub pairs_per_theme: usize,
    #[arg(long, default_value_t = 10)]
    pub batch_size: usize,
    /// Ask for a short explanation with every pair.
    #[arg(long)]
    pub rationale: bool,
    /// Also split the kept pairs into train and validation files.
    #[arg(long)]
    pub split: Option<f64>,
}

#[derive(Debug, Args)]
pub struct Translate {
    #[arg(long)]
    pub nlq: String,
    /// Where to write the trace JSON.
    #[arg(long, default_value = "trace.json")]
    pub trace: PathBuf,
}

#[derive(Debug, Args)]
pub struct Eval {
    /// Repeat the evaluation and also report the mean of the per-pass means.
    #[arg(long, default_value_t = 1)]
    pub iterations: usize,
}

#[derive(Debug, Args)]
pub struct Sweep {
    /// Grid axis as name=v1,v2 (n, temperature or t); repeatable. The full grid when absent.
    #[arg(long)]
    pub knob: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub iterations: usize,
}

#[derive(Debug, Args)]
pub struct Taxonomy {
    /// JSONL of diagnostics, or of records carrying a `diagnostics` list.
    pub input: PathBuf,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}
