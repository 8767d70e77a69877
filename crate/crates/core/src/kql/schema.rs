use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScalarType {
    String,
    Datetime,
    Timespan,
    Int,
    Long,
    Real,
    Bool,
    Dynamic,
}

impl ScalarType {
    pub fn as_str(self) -> &'static str {
        match self {
            ScalarType::String => "string",
            ScalarType::Datetime => "datetime",
            ScalarType::Timespan => "timespan",
            ScalarType::Int => "int",
            ScalarType::Long => "long",
            ScalarType::Real => "real",
            ScalarType::Bool => "bool",
            ScalarType::Dynamic => "dynamic",
        }
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, ScalarType::Int | ScalarType::Long | ScalarType::Real)
    }
}

impl fmt::Display for ScalarType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for ScalarType {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ScalarType {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl FromStr for ScalarType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "string" => ScalarType::String,
            "datetime" | "date" => ScalarType::Datetime,
            "timespan" | "time" => ScalarType::Timespan,
            "int" => ScalarType::Int,
            "long" => ScalarType::Long,
            "real" | "double" => ScalarType::Real,
            "bool" | "boolean" => ScalarType::Bool,
            "dynamic" => ScalarType::Dynamic,
            other => return Err(Error::Schema(format!("unknown column type '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ScalarType,
}

impl Column {
    pub fn new(name: impl Into<String>, ty: ScalarType) -> Self {
        Column {
            name: name.into(),
            ty,
        }
    }
}

/// A name lookup that succeeded, possibly only case-insensitively.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resolved<'a> {
    pub canonical: &'a str,
    pub exact: bool,
}

/// Tables, their typed columns, and sampled column values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SchemaCatalog {
    tables: BTreeMap<String, Vec<Column>>,
    values: BTreeMap<(String, String), Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct RawTable {
    columns: Vec<Column>,
}

#[derive(Serialize, Deserialize)]
struct RawCatalog {
    tables: BTreeMap<String, RawTable>,
    #[serde(default)]
    values: BTreeMap<String, Vec<String>>,
}

impl SchemaCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_table(&mut self, name: impl Into<String>, columns: Vec<Column>) -> Result<()> {
        let name = name.into();
        if self.tables.contains_key(&name) {
            return Err(Error::Schema(format!("duplicate table '{name}'")));
        }
        for (i, c) in columns.iter().enumerate() {
            if columns[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::Schema(format!(
                    "duplicate column '{}' in table '{name}'",
                    c.name
                )));
            }
        }
        self.tables.insert(name, columns);
        Ok(())
    }

    /// Appends a column to an existing table.
    pub fn add_column(&mut self, table: &str, column: Column) -> Result<()> {
        let cols = self
            .tables
            .get_mut(table)
            .ok_or_else(|| Error::Schema(format!("unknown table '{table}'")))?;
        if cols.iter().any(|c| c.name == column.name) {
            return Err(Error::Schema(format!(
                "duplicate column '{}' in table '{table}'",
                column.name
            )));
        }
        cols.push(column);
        Ok(())
    }

    pub fn add_values(&mut self, table: &str, column: &str, values: Vec<String>) -> Result<()> {
        if self.column(table, column).is_none() {
            return Err(Error::Schema(format!(
                "values given for unknown column '{table}.{column}'"
            )));
        }
        self.values
            .entry((table.to_string(), column.to_string()))
            .or_default()
            .extend(values);
        Ok(())
    }

    pub fn tables(&self) -> impl Iterator<Item = (&str, &[Column])> {
        self.tables.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn table_names(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }

    pub fn table_count(&self) -> usize {
        self.tables.len()
    }

    pub fn columns(&self, table: &str) -> Option<&[Column]> {
        self.tables.get(table).map(Vec::as_slice)
    }

    pub fn column(&self, table: &str, column: &str) -> Option<&Column> {
        self.columns(table)?.iter().find(|c| c.name == column)
    }

    /// Sampled values per `(table, column)`.
    pub fn values(&self) -> impl Iterator<Item = (&str, &str, &[String])> {
        self.values
            .iter()
            .map(|((t, c), v)| (t.as_str(), c.as_str(), v.as_slice()))
    }

    pub fn values_for(&self, table: &str, column: &str) -> &[String] {
        self.values
            .get(&(table.to_string(), column.to_string()))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Exact lookup first, then a unique case-insensitive match.
    pub fn resolve_table(&self, name: &str) -> Option<Resolved<'_>> {
        if let Some((k, _)) = self.tables.get_key_value(name) {
            return Some(Resolved {
                canonical: k,
                exact: true,
            });
        }
        unique_ci(self.tables.keys().map(String::as_str), name)
    }

    pub fn resolve_column(&self, table: &str, name: &str) -> Option<Resolved<'_>> {
        let cols = self.columns(table)?;
        if let Some(c) = cols.iter().find(|c| c.name == name) {
            return Some(Resolved {
                canonical: &c.name,
                exact: true,
            });
        }
        unique_ci(cols.iter().map(|c| c.name.as_str()), name)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: RawCatalog = serde_json::from_str(s)?;
        let mut cat = SchemaCatalog::new();
        for (name, t) in raw.tables {
            cat.add_table(name, t.columns)?;
        }
        for (key, vals) in raw.values {
            let (table, column) = key.split_once('.').ok_or_else(|| {
                Error::Schema(format!("values key '{key}' is not <table>.<column>"))
            })?;
            cat.add_values(table, column, vals)?;
        }
        Ok(cat)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        let raw = RawCatalog {
            tables: self
                .tables
                .iter()
                .map(|(k, v)| (k.clone(), RawTable { columns: v.clone() }))
                .collect(),
            values: self
                .values
                .iter()
                .map(|((t, c), v)| (format!("{t}.{c}"), v.clone()))
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("catalog serializes")
    }
}

fn unique_ci<'a>(names: impl Iterator<Item = &'a str>, wanted: &str) -> Option<Resolved<'a>> {
    let mut hit = None;
    for n in names {
        if n.eq_ignore_ascii_case(wanted) {
            if hit.is_some() {
                return None;
            }
            hit = Some(n);
        }
    }
    hit.map(|canonical| Resolved {
        canonical,
        exact: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"{
        "tables": {
            "EmailEvents": { "columns": [
                {"name": "Timestamp", "type": "datetime"},
                {"name": "Subject", "type": "string"}
            ] }
        },
        "values": { "EmailEvents.Subject": ["Invoice", "Hello"] }
    }"#;

    #[test]
    fn load_and_lookup() {
        let cat = SchemaCatalog::from_json_str(SMALL).unwrap();
        assert_eq!(cat.table_count(), 1);
        assert_eq!(
            cat.column("EmailEvents", "Timestamp").unwrap().ty,
            ScalarType::Datetime
        );
        assert_eq!(
            cat.values_for("EmailEvents", "Subject"),
            ["Invoice", "Hello"]
        );
        assert!(cat.values_for("EmailEvents", "Timestamp").is_empty());
    }

    #[test]
    fn json_round_trip() {
        let cat = SchemaCatalog::from_json_str(SMALL).unwrap();
        let again = SchemaCatalog::from_json_str(&cat.to_json_string()).unwrap();
        assert_eq!(cat, again);
    }

    #[test]
    fn case_insensitive_fallback_reports_canonical_casing() {
        let cat = SchemaCatalog::from_json_str(SMALL).unwrap();
        let r = cat.resolve_table("emailevents").unwrap();
        assert_eq!(r.canonical, "EmailEvents");
        assert!(!r.exact);
        assert!(cat.resolve_table("EmailEvents").unwrap().exact);
        let c = cat.resolve_column("EmailEvents", "SUBJECT").unwrap();
        assert_eq!(c.canonical, "Subject");
        assert!(cat.resolve_column("EmailEvents", "Nope").is_none());
    }

    #[test]
    fn duplicate_columns_rejected() {
        let mut cat = SchemaCatalog::new();
        let cols = vec![
            Column::new("A", ScalarType::Int),
            Column::new("A", ScalarType::String),
        ];
        assert!(cat.add_table("T", cols).is_err());
    }

    #[test]
    fn values_for_unknown_column_rejected() {
        let bad = r#"{"tables": {"T": {"columns": []}}, "values": {"T.X": ["1"]}}"#;
        assert!(SchemaCatalog::from_json_str(bad).is_err());
        let bad = r#"{"tables": {"T": {"columns": [{"name":"A","type":"nope"}]}}}"#;
        assert!(SchemaCatalog::from_json_str(bad).is_err());
    }
}
