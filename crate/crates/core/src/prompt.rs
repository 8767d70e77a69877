//! Prompt templates and deterministic rendering.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::dataset::{Pair, Theme};
use crate::error::{Error, Result};
use crate::retrieval::SchemaSlice;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    ZeroShot,
    Nl2kql,
    Alt1,
    Alt2,
    OracleGeneral,
    OracleSchema,
    FsdbSynth,
    CotRationale,
}

impl TemplateId {
    pub const ALL: [TemplateId; 8] = [
        TemplateId::ZeroShot,
        TemplateId::Nl2kql,
        TemplateId::Alt1,
        TemplateId::Alt2,
        TemplateId::OracleGeneral,
        TemplateId::OracleSchema,
        TemplateId::FsdbSynth,
        TemplateId::CotRationale,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::ZeroShot => "zero_shot",
            TemplateId::Nl2kql => "nl2kql",
            TemplateId::Alt1 => "alt1",
            TemplateId::Alt2 => "alt2",
            TemplateId::OracleGeneral => "oracle_general",
            TemplateId::OracleSchema => "oracle_schema",
            TemplateId::FsdbSynth => "fsdb_synth",
            TemplateId::CotRationale => "cot_rationale",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.txt", self.as_str())
    }

    fn builtin(self) -> &'static str {
        match self {
            TemplateId::ZeroShot => include_str!("../templates/zero_shot.txt"),
            TemplateId::Nl2kql => include_str!("../templates/nl2kql.txt"),
            TemplateId::Alt1 => include_str!("../templates/alt1.txt"),
            TemplateId::Alt2 => include_str!("../templates/alt2.txt"),
            TemplateId::OracleGeneral => include_str!("../templates/oracle_general.txt"),
            TemplateId::OracleSchema => include_str!("../templates/oracle_schema.txt"),
            TemplateId::FsdbSynth => include_str!("../templates/fsdb_synth.txt"),
            TemplateId::CotRationale => include_str!("../templates/cot_rationale.txt"),
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Generator prompt family for the retrieval-augmented mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    Original,
    #[default]
    Alt1,
    Alt2,
}

impl PromptVariant {
    pub fn template(self) -> TemplateId {
        match self {
            PromptVariant::Original => TemplateId::Nl2kql,
            PromptVariant::Alt1 => TemplateId::Alt1,
            PromptVariant::Alt2 => TemplateId::Alt2,
        }
    }
}

impl FromStr for PromptVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" | "nl2kql" => Ok(PromptVariant::Original),
            "alt1" => Ok(PromptVariant::Alt1),
            "alt2" => Ok(PromptVariant::Alt2),
            other => Err(Error::Config(format!("unknown prompt variant '{other}'"))),
        }
    }
}

/// What was injected into a template.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptSlots {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nlq: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<SchemaSlice>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub examples: Vec<Pair>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theme: Option<Theme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub template_id: TemplateId,
    pub rendered: String,
    pub slots: PromptSlots,
    pub token_estimate: usize,
}

/// Slot names recognised inside templates.
pub const SLOT_NAMES: &[&str] = &[
    "NLQ",
    "SCHEMA",
    "VALUES",
    "EXAMPLES",
    "CANDIDATES",
    "THEME",
    "TABLES",
    "COUNT",
];

/// Rough token count: (word runs + punctuation characters) x 1.3, rounded up.
pub fn token_estimate(text: &str) -> usize {
    let mut units = 0usize;
    let mut in_word = false;
    for c in text.chars() {
        if c.is_alphanumeric() || c == '_' {
            if !in_word {
                units += 1;
                in_word = true;
            }
        } else {
            in_word = false;
            if !c.is_whitespace() {
                units += 1;
            }
        }
    }
    (units * 13).div_ceil(10)
}

/// One line per table: `Table(col: type, ...)`.
pub fn render_schema(slice: &SchemaSlice) -> String {
    slice
        .tables
        .iter()
        .map(|t| {
            let cols: Vec<String> = t
                .columns
                .iter()
                .map(|c| format!("{}: {}", c.name, c.ty))
                .collect();
            format!("{}({})", t.name, cols.join(", "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// One line per sampled value: `Table.Column = value`.
pub fn render_values(slice: &SchemaSlice) -> String {
    slice
        .tables
        .iter()
        .flat_map(|t| {
            t.values
                .iter()
                .map(move |v| format!("{}.{} = {}", t.name, v.column, v.value))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Inverse of [`render_schema`]: every `Table(col: type, ...)` line in `text`.
pub fn parse_schema_lines(text: &str) -> SchemaSlice {
    static LINE: LazyLock<regex::Regex> =
        LazyLock::new(|| regex::Regex::new(r"^([A-Za-z_][A-Za-z0-9_]*)\((.*)\)$").unwrap());
    let mut slice = SchemaSlice::default();
    for line in text.lines() {
        let Some(c) = LINE.captures(line.trim()) else {
            continue;
        };
        let mut columns = Vec::new();
        for part in c[2].split(", ") {
            let Some((name, ty)) = part.split_once(": ") else {
                continue;
            };
            if let Ok(ty) = ty.trim().parse() {
                columns.push(crate::kql::Column::new(name.trim(), ty));
            }
        }
        if columns.is_empty() || slice.tables.iter().any(|t| t.name == c[1]) {
            continue;
        }
        slice.tables.push(crate::retrieval::SliceTable {
            name: c[1].to_string(),
            columns,
            values: Vec::new(),
        });
    }
    slice
}

pub fn render_examples(examples: &[Pair]) -> String {
    examples
        .iter()
        .map(|e| format!("NLQ: {}\nKQL:\n{}", e.nlq, e.kql))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn render_candidates(candidates: &[String]) -> String {
    candidates
        .iter()
        .enumerate()
        .map(|(i, c)| format!("Response {}:\n{}", i + 1, c.trim()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn theme_description(theme: Theme) -> &'static str {
    match theme {
        Theme::Explore => "Explore (inspect what data a table holds and what normal activity looks like)",
        Theme::Expansion => "Expansion (pivot from a known entity to related devices, accounts, files or connections)",
        Theme::Detect => "Detect (find suspicious or malicious activity)",
        Theme::Remediate => "Remediate (identify affected assets that need containment or cleanup)",
        Theme::Report => "Report (summarize activity into counts and trends)",
    }
}

/// Single-pass substitution of `{NAME}` slots; substituted text is never rescanned.
pub fn substitute(template: &str, values: &BTreeMap<&str, String>) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replaced = after.find('}').and_then(|close| {
            let name = &after[..close];
            values.get(name).map(|v| (v, close))
        });
        match replaced {
            Some((v, close)) => {
                out.push_str(v);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// The template set, built in or overridden from a directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Templates {
    texts: BTreeMap<TemplateId, String>,
}

static BUILTIN: LazyLock<Templates> = LazyLock::new(Templates::builtin);

fn strip_final_newline(s: &str) -> String {
    s.strip_suffix('\n').unwrap_or(s).to_string()
}

impl Default for Templates {
    fn default() -> Self {
        BUILTIN.clone()
    }
}

impl Templates {
    pub fn builtin() -> Self {
        Templates {
            texts: TemplateId::ALL
                .iter()
                .map(|id| (*id, strip_final_newline(id.builtin())))
                .collect(),
        }
    }

    /// Built-in templates, replaced by any `<template_id>.txt` found in `dir`.
    pub fn with_overrides(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut t = Self::builtin();
        for id in TemplateId::ALL {
            let path = dir.join(id.file_name());
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                t.texts.insert(id, strip_final_newline(&text));
            }
        }
        Ok(t)
    }

    pub fn text(&self, id: TemplateId) -> &str {
        &self.texts[&id]
    }

    fn render(&self, id: TemplateId, slots: PromptSlots) -> PromptInstance {
        let mut values = BTreeMap::new();
        values.insert("NLQ", slots.nlq.clone().unwrap_or_default());
        let schema = slots.schema.clone().unwrap_or_default();
        values.insert("SCHEMA", render_schema(&schema));
        values.insert("TABLES", render_schema(&schema));
        values.insert("VALUES", render_values(&schema));
        values.insert("EXAMPLES", render_examples(&slots.examples));
        values.insert("CANDIDATES", render_candidates(&slots.candidates));
        values.insert(
            "THEME",
            slots
                .theme
                .map(theme_description)
                .unwrap_or_default()
                .to_string(),
        );
        values.insert(
            "COUNT",
            slots.count.map(|c| c.to_string()).unwrap_or_default(),
        );
        let rendered = substitute(self.text(id), &values);
        PromptInstance {
            template_id: id,
            token_estimate: token_estimate(&rendered),
            rendered,
            slots,
        }
    }

    pub fn build_zero_shot(&self, nlq: &str) -> Result<PromptInstance> {
        require_nlq(nlq)?;
        Ok(self.render(
            TemplateId::ZeroShot,
            PromptSlots {
                nlq: Some(nlq.to_string()),
                ..PromptSlots::default()
            },
        ))
    }

    /// Retrieval-augmented generator prompt for any [`PromptVariant`].
    pub fn build_generator(
        &self,
        nlq: &str,
        schema: &SchemaSlice,
        examples: &[Pair],
        variant: PromptVariant,
    ) -> Result<PromptInstance> {
        require_nlq(nlq)?;
        if schema.is_empty() {
            return Err(Error::Prompt("schema slice is empty".into()));
        }
        Ok(self.render(
            variant.template(),
            PromptSlots {
                nlq: Some(nlq.to_string()),
                schema: Some(schema.clone()),
                examples: examples.to_vec(),
                ..PromptSlots::default()
            },
        ))
    }

    /// Alternative prompt `variant` (1 or 2).
    pub fn build_alternative(
        &self,
        nlq: &str,
        schema: &SchemaSlice,
        examples: &[Pair],
        variant: u8,
    ) -> Result<PromptInstance> {
        let v = match variant {
            1 => PromptVariant::Alt1,
            2 => PromptVariant::Alt2,
            other => return Err(Error::Prompt(format!("no alternative prompt #{other}"))),
        };
        self.build_generator(nlq, schema, examples, v)
    }

    /// Oracle prompt; the schema-context form is used when `schema` is given.
    pub fn build_oracle(
        &self,
        nlq: &str,
        candidates: &[String],
        schema: Option<&SchemaSlice>,
    ) -> Result<PromptInstance> {
        require_nlq(nlq)?;
        if candidates.is_empty() {
            return Err(Error::Prompt("oracle needs at least one candidate".into()));
        }
        let id = if schema.is_some() {
            TemplateId::OracleSchema
        } else {
            TemplateId::OracleGeneral
        };
        Ok(self.render(
            id,
            PromptSlots {
                nlq: Some(nlq.to_string()),
                schema: schema.cloned(),
                candidates: candidates.to_vec(),
                ..PromptSlots::default()
            },
        ))
    }

    /// Teacher prompt asking for `count` pairs on `theme` over `tables`.
    pub fn build_synthesis(
        &self,
        theme: Theme,
        tables: &SchemaSlice,
        count: usize,
        with_rationale: bool,
    ) -> Result<PromptInstance> {
        if tables.is_empty() {
            return Err(Error::Prompt("synthesis needs at least one table".into()));
        }
        if count == 0 {
            return Err(Error::Prompt("synthesis count must be positive".into()));
        }
        let id = if with_rationale {
            TemplateId::CotRationale
        } else {
            TemplateId::FsdbSynth
        };
        Ok(self.render(
            id,
            PromptSlots {
                schema: Some(tables.clone()),
                theme: Some(theme),
                count: Some(count),
                ..PromptSlots::default()
            },
        ))
    }
}

fn require_nlq(nlq: &str) -> Result<()> {
    if nlq.trim().is_empty() {
        Err(Error::Prompt("natural language query is empty".into()))
    } else {
        Ok(())
    }
}

pub fn build_zero_shot(nlq: &str) -> Result<PromptInstance> {
    BUILTIN.build_zero_shot(nlq)
}

pub fn build_alternative(
    nlq: &str,
    schema: &SchemaSlice,
    examples: &[Pair],
    variant: u8,
) -> Result<PromptInstance> {
    BUILTIN.build_alternative(nlq, schema, examples, variant)
}

pub fn build_oracle(
    nlq: &str,
    candidates: &[String],
    schema: Option<&SchemaSlice>,
) -> Result<PromptInstance> {
    BUILTIN.build_oracle(nlq, candidates, schema)
}

pub fn build_synthesis(
    theme: Theme,
    tables: &SchemaSlice,
    count: usize,
    with_rationale: bool,
) -> Result<PromptInstance> {
    BUILTIN.build_synthesis(theme, tables, count, with_rationale)
}
