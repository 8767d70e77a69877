//! The semantic data catalog: table, value and example stores, plus the
//! schema refiner and few-shot selector built on them.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::embed::Embedder;
use super::store::{CatalogEntry, EmbeddingStore, EntryKind, Payload, StoreBuilder};
use crate::dataset::FsdbExample;
use crate::error::{Error, Result};
use crate::kql::{self, Column, SchemaCatalog};

pub const TABLES_FILE: &str = "tables.ejsonl";
pub const VALUES_FILE: &str = "values.ejsonl";
pub const FSDB_FILE: &str = "fsdb.ejsonl";

pub fn table_document(table: &str, columns: &[Column]) -> String {
    let cols: Vec<&str> = columns.iter().map(|c| c.name.as_str()).collect();
    format!("{table}: {}", cols.join(", "))
}

pub fn value_document(table: &str, column: &str, literal: &str) -> String {
    format!("{table}.{column} = {literal}")
}

fn build(embedder: &dyn Embedder, docs: Vec<(String, String, Payload)>) -> Result<EmbeddingStore> {
    let mut b = StoreBuilder::new();
    if docs.is_empty() {
        return Ok(b.freeze());
    }
    let texts: Vec<&str> = docs.iter().map(|(_, t, _)| t.as_str()).collect();
    let vectors = embedder.embed(&texts)?;
    for ((id, text, payload), vector) in docs.into_iter().zip(vectors) {
        b.insert(CatalogEntry {
            id,
            kind: payload.kind(),
            text,
            payload,
            vector,
        })?;
    }
    Ok(b.freeze())
}

pub fn build_table_store(
    schema: &SchemaCatalog,
    embedder: &dyn Embedder,
) -> Result<EmbeddingStore> {
    let docs = schema
        .tables()
        .map(|(name, cols)| {
            (
                name.to_string(),
                table_document(name, cols),
                Payload::Table {
                    table: name.to_string(),
                    columns: cols.to_vec(),
                },
            )
        })
        .collect();
    build(embedder, docs)
}

pub fn build_value_store(
    schema: &SchemaCatalog,
    embedder: &dyn Embedder,
) -> Result<EmbeddingStore> {
    let mut docs = Vec::new();
    let mut seen = BTreeSet::new();
    for (table, column, values) in schema.values() {
        for literal in values {
            let text = value_document(table, column, literal);
            if seen.insert(text.clone()) {
                docs.push((
                    text.clone(),
                    text,
                    Payload::Value {
                        table: table.to_string(),
                        column: column.to_string(),
                        literal: literal.clone(),
                    },
                ));
            }
        }
    }
    build(embedder, docs)
}

pub fn build_example_store(
    examples: &[FsdbExample],
    embedder: &dyn Embedder,
) -> Result<EmbeddingStore> {
    let docs = examples
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            (
                format!("ex-{i:05}"),
                ex.nlq.clone(),
                Payload::Example {
                    nlq: ex.nlq.clone(),
                    kql: ex.kql.clone(),
                    theme: ex.theme,
                },
            )
        })
        .collect();
    build(embedder, docs)
}

/// All three stores, built from one schema and one example set.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    pub tables: EmbeddingStore,
    pub values: EmbeddingStore,
    pub fsdb: EmbeddingStore,
}

impl Catalog {
    pub fn build(
        schema: &SchemaCatalog,
        examples: &[FsdbExample],
        embedder: &dyn Embedder,
    ) -> Result<Self> {
        Ok(Catalog {
            tables: build_table_store(schema, embedder)?,
            values: build_value_store(schema, embedder)?,
            fsdb: build_example_store(examples, embedder)?,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.tables.save(dir.join(TABLES_FILE))?;
        self.values.save(dir.join(VALUES_FILE))?;
        self.fsdb.save(dir.join(FSDB_FILE))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(Catalog {
            tables: EmbeddingStore::load(dir.join(TABLES_FILE))?,
            values: EmbeddingStore::load(dir.join(VALUES_FILE))?,
            fsdb: EmbeddingStore::load(dir.join(FSDB_FILE))?,
        })
    }

    /// Fails when a store was built by a different embedder.
    pub fn check_provider(&self, embedder: &dyn Embedder) -> Result<()> {
        for (name, store) in [
            ("tables", &self.tables),
            ("values", &self.values),
            ("fsdb", &self.fsdb),
        ] {
            if let Some(p) = store.provider_id() {
                if p != embedder.id() {
                    return Err(Error::Config(format!(
                        "{name} store was built with '{p}', but the configured embedder is '{}'",
                        embedder.id()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceValue {
    pub column: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceTable {
    pub name: String,
    pub columns: Vec<Column>,
    #[serde(default)]
    pub values: Vec<SliceValue>,
}

/// The part of the schema shown to a model, in retrieval order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaSlice {
    pub tables: Vec<SliceTable>,
}

impl SchemaSlice {
    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn table_names(&self) -> BTreeSet<String> {
        self.tables.iter().map(|t| t.name.clone()).collect()
    }

    pub fn has_values(&self) -> bool {
        self.tables.iter().any(|t| !t.values.is_empty())
    }

    /// Every table of `schema`, without values.
    pub fn full(schema: &SchemaCatalog) -> Self {
        SchemaSlice {
            tables: schema
                .tables()
                .map(|(name, cols)| SliceTable {
                    name: name.to_string(),
                    columns: cols.to_vec(),
                    values: Vec::new(),
                })
                .collect(),
        }
    }

    /// A catalog containing just the slice's tables.
    pub fn to_catalog(&self) -> SchemaCatalog {
        let mut cat = SchemaCatalog::new();
        for t in &self.tables {
            // slices come from a valid catalog, so duplicates cannot occur
            let _ = cat.add_table(t.name.clone(), t.columns.clone());
        }
        cat
    }
}

/// Top-`t` tables for `nlq`, each with up to `v` values when requested.
pub fn refine_schema(
    nlq: &str,
    embedder: &dyn Embedder,
    tables: &EmbeddingStore,
    values: &EmbeddingStore,
    t: usize,
    v: usize,
    include_values: bool,
) -> Result<SchemaSlice> {
    let query = embedder.embed_one(nlq)?;
    let top = tables.top_k(&query, t)?;
    let mut slice = SchemaSlice::default();
    for scored in top.entries {
        let Payload::Table { table, columns } = scored.entry.payload else {
            return Err(Error::Retrieval(format!(
                "entry '{}' in the table store is not a table",
                scored.entry.id
            )));
        };
        let mut vals = Vec::new();
        if include_values && v > 0 && !values.is_empty() {
            let has_any = values
                .entries()
                .iter()
                .any(|e| value_table(e) == Some(table.as_str()));
            if has_any {
                let hits =
                    values.top_k_where(&query, v, |e| value_table(e) == Some(table.as_str()))?;
                for h in hits.entries {
                    if let Payload::Value {
                        column, literal, ..
                    } = h.entry.payload
                    {
                        vals.push(SliceValue {
                            column,
                            value: literal,
                        });
                    }
                }
            }
        }
        slice.tables.push(SliceTable {
            name: table,
            columns,
            values: vals,
        });
    }
    Ok(slice)
}

fn value_table(e: &CatalogEntry) -> Option<&str> {
    match &e.payload {
        Payload::Value { table, .. } => Some(table),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShot {
    pub id: String,
    pub nlq: String,
    pub kql: String,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FewShotSelection {
    pub examples: Vec<FewShot>,
    /// Set when no example fit the allowed tables and the unfiltered pool was used.
    pub fallback: bool,
}

/// Tables an example query reads, tolerating queries outside the subset.
pub fn example_tables(kql_text: &str) -> BTreeSet<String> {
    match kql::parse(kql_text) {
        Ok(ast) => kql::extract_shape(&ast).tables,
        Err(_) => kql::extract_shape_tolerant(kql_text).tables,
    }
}

/// Top-`f` examples whose queries only use `allowed_tables`.
pub fn select_few_shots(
    nlq: &str,
    embedder: &dyn Embedder,
    fsdb: &EmbeddingStore,
    allowed_tables: &BTreeSet<String>,
    f: usize,
) -> Result<FewShotSelection> {
    if f == 0 {
        return Ok(FewShotSelection::default());
    }
    let query = embedder.embed_one(nlq)?;
    let fits = |e: &CatalogEntry| match &e.payload {
        Payload::Example { kql, .. } => {
            let tables = example_tables(kql);
            !tables.is_empty() && tables.is_subset(allowed_tables)
        }
        _ => false,
    };
    let any_fit = fsdb
        .entries()
        .iter()
        .any(|e| e.kind == EntryKind::Example && fits(e));
    let (result, fallback) = if any_fit {
        (fsdb.top_k_where(&query, f, fits)?, false)
    } else {
        (
            fsdb.top_k_where(&query, f, |e| e.kind == EntryKind::Example)?,
            true,
        )
    };
    let examples = result
        .entries
        .into_iter()
        .filter_map(|s| match s.entry.payload {
            Payload::Example { nlq, kql, .. } => Some(FewShot {
                id: s.entry.id,
                nlq,
                kql,
                score: s.score,
            }),
            _ => None,
        })
        .collect();
    Ok(FewShotSelection { examples, fallback })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Theme;
    use crate::kql::ScalarType;
    use crate::retrieval::HashingEmbedder;

    fn schema() -> SchemaCatalog {
        let mut s = SchemaCatalog::new();
        s.add_table(
            "EmailEvents",
            vec![
                Column::new("Subject", ScalarType::String),
                Column::new("Timestamp", ScalarType::Datetime),
            ],
        )
        .unwrap();
        s.add_table(
            "DeviceNetworkEvents",
            vec![Column::new("RemoteIP", ScalarType::String)],
        )
        .unwrap();
        s.add_table(
            "DeviceProcessEvents",
            vec![Column::new("FileName", ScalarType::String)],
        )
        .unwrap();
        s.add_values(
            "EmailEvents",
            "Subject",
            vec!["Invoice".into(), "Payroll".into()],
        )
        .unwrap();
        s.add_values(
            "DeviceProcessEvents",
            "FileName",
            vec!["powershell.exe".into()],
        )
        .unwrap();
        s
    }

    fn ex(theme: Theme, nlq: &str, kql: &str) -> FsdbExample {
        FsdbExample {
            theme,
            nlq: nlq.into(),
            kql: kql.into(),
            rationale: None,
        }
    }

    #[test]
    fn documents() {
        let s = schema();
        assert_eq!(
            table_document("EmailEvents", s.columns("EmailEvents").unwrap()),
            "EmailEvents: Subject, Timestamp"
        );
        assert_eq!(
            value_document("EmailEvents", "Subject", "Invoice"),
            "EmailEvents.Subject = Invoice"
        );
    }

    #[test]
    fn refine_schema_cardinality() {
        let e = HashingEmbedder::default();
        let s = schema();
        let cat = Catalog::build(&s, &[], &e).unwrap();
        let slice =
            refine_schema("email subject", &e, &cat.tables, &cat.values, 1, 5, false).unwrap();
        assert_eq!(slice.len(), 1);
        assert_eq!(slice.tables[0].name, "EmailEvents");
        assert_eq!(slice.tables[0].columns.len(), 2);
        assert!(!slice.has_values());

        let slice = refine_schema(
            "email subject invoice",
            &e,
            &cat.tables,
            &cat.values,
            9,
            1,
            true,
        )
        .unwrap();
        assert_eq!(slice.len(), 3);
        let email = slice
            .tables
            .iter()
            .find(|t| t.name == "EmailEvents")
            .unwrap();
        assert_eq!(email.values.len(), 1);
        assert_eq!(email.values[0].value, "Invoice");
        assert!(slice.tables.iter().all(|t| t.values.len() <= 1));
        let net = slice
            .tables
            .iter()
            .find(|t| t.name == "DeviceNetworkEvents")
            .unwrap();
        assert!(net.values.is_empty());
    }

    #[test]
    fn few_shots_filter_and_fallback() {
        let e = HashingEmbedder::default();
        let fsdb = build_example_store(
            &[
                ex(
                    Theme::Explore,
                    "show emails with subject",
                    "EmailEvents | project Subject",
                ),
                ex(
                    Theme::Detect,
                    "find network connections",
                    "DeviceNetworkEvents | take 5",
                ),
                ex(Theme::Report, "count emails", "EmailEvents | count"),
            ],
            &e,
        )
        .unwrap();
        let allowed: BTreeSet<String> = ["EmailEvents".to_string()].into();
        let sel = select_few_shots("emails subject", &e, &fsdb, &allowed, 2).unwrap();
        assert!(!sel.fallback);
        assert_eq!(sel.examples.len(), 2);
        assert!(sel
            .examples
            .iter()
            .all(|x| x.kql.starts_with("EmailEvents")));

        let none: BTreeSet<String> = ["Nope".to_string()].into();
        let sel = select_few_shots("network connections", &e, &fsdb, &none, 2).unwrap();
        assert!(sel.fallback);
        assert_eq!(sel.examples.len(), 2);
        assert_eq!(sel.examples[0].kql, "DeviceNetworkEvents | take 5");
    }

    #[test]
    fn catalog_round_trip() {
        let e = HashingEmbedder::default();
        let cat = Catalog::build(&schema(), &[ex(Theme::Explore, "a", "EmailEvents")], &e).unwrap();
        let dir = tempfile::tempdir().unwrap();
        cat.save(dir.path()).unwrap();
        let back = Catalog::load(dir.path()).unwrap();
        assert_eq!(back.tables.len(), 3);
        assert_eq!(back.values.len(), 3);
        assert_eq!(back.fsdb.len(), 1);
        back.check_provider(&e).unwrap();
        assert!(back.check_provider(&HashingEmbedder::new(64)).is_err());
    }
}
