use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("retrieval error: {0}")]
    Retrieval(String),
    #[error("prompt error: {0}")]
    Prompt(String),
    #[error("unrecorded request: model={model} prompt_sha256={prompt_sha256} temperature={temperature} sample={sample}")]
    UnrecordedRequest {
        model: String,
        prompt_sha256: String,
        temperature: f64,
        sample: u32,
    },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("backend error after {attempts} attempt(s): {cause}")]
    Backend { attempts: u32, cause: String },
    #[error("unpriced model '{0}'")]
    Unpriced(String),
    #[error("pipeline error: {0}")]
    Pipeline(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// Whether retrying the same request could succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Backend { .. })
    }

    /// Configuration and usage problems, as opposed to runtime failures.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Schema(_))
    }
}
