//! Natural-language to KQL translation: a schema-aware KQL subset analyzer,
//! embedding retrieval, prompt construction, model backends, the translation
//! pipeline and its evaluation harness.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod gateway;
pub mod io;
pub mod kql;
pub mod pipeline;
pub mod prompt;
pub mod retrieval;

pub use error::{Error, Result};
