//! Embedding providers, persisted stores and cosine retrieval.

pub mod catalog;
pub mod embed;
pub mod store;

pub use catalog::{
    build_example_store, build_table_store, build_value_store, example_tables, refine_schema,
    select_few_shots, Catalog, FewShot, FewShotSelection, SchemaSlice, SliceTable, SliceValue,
};
pub use embed::{
    cosine, Embedder, EmbeddingVector, HashingEmbedder, LiveEmbedder, LiveEmbedderConfig,
};
pub use store::{
    CatalogEntry, EmbeddingStore, EntryKind, Payload, RetrievalResult, ScoredEntry, StoreBuilder,
};
