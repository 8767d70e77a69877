//! Immutable embedding stores with exact cosine top-k.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::embed::{cosine, EmbeddingVector};
use crate::dataset::Theme;
use crate::error::{Error, Result};
use crate::kql::Column;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Table,
    Value,
    Example,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    Table {
        table: String,
        columns: Vec<Column>,
    },
    Value {
        table: String,
        column: String,
        literal: String,
    },
    Example {
        nlq: String,
        kql: String,
        theme: Theme,
    },
}

impl Payload {
    pub fn kind(&self) -> EntryKind {
        match self {
            Payload::Table { .. } => EntryKind::Table,
            Payload::Value { .. } => EntryKind::Value,
            Payload::Example { .. } => EntryKind::Example,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: String,
    pub kind: EntryKind,
    pub text: String,
    pub payload: Payload,
    pub vector: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredEntry {
    pub entry: CatalogEntry,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalResult {
    pub entries: Vec<ScoredEntry>,
    pub k_requested: usize,
}

impl RetrievalResult {
    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.entry.id.as_str()).collect()
    }
}

/// Single-writer construction of an [`EmbeddingStore`].
#[derive(Debug, Default)]
pub struct StoreBuilder {
    entries: Vec<CatalogEntry>,
    ids: HashSet<String>,
}

impl StoreBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, entry: CatalogEntry) -> Result<()> {
        if entry.kind != entry.payload.kind() {
            return Err(Error::Retrieval(format!(
                "entry '{}' kind does not match its payload",
                entry.id
            )));
        }
        if entry.vector.norm() == 0.0 || !entry.vector.norm().is_finite() {
            return Err(Error::Retrieval(format!(
                "entry '{}' has a zero or non-finite vector",
                entry.id
            )));
        }
        if let Some(first) = self.entries.first() {
            if first.vector.len() != entry.vector.len()
                || first.vector.provider_id != entry.vector.provider_id
            {
                return Err(Error::Config(format!(
                    "entry '{}' vector ({} dims, {}) does not match store ({} dims, {})",
                    entry.id,
                    entry.vector.len(),
                    entry.vector.provider_id,
                    first.vector.len(),
                    first.vector.provider_id
                )));
            }
        }
        if !self.ids.insert(entry.id.clone()) {
            return Err(Error::Retrieval(format!(
                "duplicate entry id '{}'",
                entry.id
            )));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn freeze(self) -> EmbeddingStore {
        EmbeddingStore {
            entries: self.entries,
        }
    }
}

/// A frozen collection of embedded documents; safe to share across threads.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingStore {
    entries: Vec<CatalogEntry>,
}

/// Ordering key: higher score first, then ascending id.
struct Ranked<'a> {
    score: f64,
    id: &'a str,
    index: usize,
}

impl PartialEq for Ranked<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked<'_> {}

impl PartialOrd for Ranked<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked<'_> {
    /// `Greater` means ranked earlier.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.id.cmp(self.id))
    }
}

impl EmbeddingStore {
    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&CatalogEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn provider_id(&self) -> Option<&str> {
        self.entries.first().map(|e| e.vector.provider_id.as_str())
    }

    /// The `k` entries most similar to `query`.
    pub fn top_k(&self, query: &EmbeddingVector, k: usize) -> Result<RetrievalResult> {
        self.top_k_where(query, k, |_| true)
    }

    /// [`top_k`](Self::top_k) restricted to entries accepted by `keep`.
    pub fn top_k_where(
        &self,
        query: &EmbeddingVector,
        k: usize,
        keep: impl Fn(&CatalogEntry) -> bool,
    ) -> Result<RetrievalResult> {
        if k == 0 {
            return Err(Error::Retrieval("k must be at least 1".into()));
        }
        if self.entries.is_empty() {
            return Err(Error::Retrieval("store is empty".into()));
        }
        if let Some(p) = self.provider_id() {
            if p != query.provider_id {
                return Err(Error::Config(format!(
                    "query embedded by '{}' but store was built with '{p}'",
                    query.provider_id
                )));
            }
        }
        let mut heap: BinaryHeap<Reverse<Ranked>> = BinaryHeap::with_capacity(k + 1);
        for (index, entry) in self.entries.iter().enumerate() {
            if !keep(entry) {
                continue;
            }
            let ranked = Ranked {
                score: cosine(query, &entry.vector)?,
                id: &entry.id,
                index,
            };
            if heap.len() < k {
                heap.push(Reverse(ranked));
            } else if heap.peek().is_some_and(|worst| ranked > worst.0) {
                heap.pop();
                heap.push(Reverse(ranked));
            }
        }
        // ascending Reverse order == best first
        let entries = heap
            .into_sorted_vec()
            .into_iter()
            .map(|Reverse(r)| ScoredEntry {
                entry: self.entries[r.index].clone(),
                score: r.score,
            })
            .collect();
        Ok(RetrievalResult {
            entries,
            k_requested: k,
        })
    }

    pub fn to_jsonl(&self) -> String {
        crate::dataset::to_jsonl(&self.entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(path, self.to_jsonl().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let entries: Vec<CatalogEntry> = crate::dataset::read_jsonl(path)?;
        let mut b = StoreBuilder::new();
        for e in entries {
            b.insert(e)?;
        }
        Ok(b.freeze())
    }
}
