//! Diagnostics and the error taxonomy they are bucketed into.
//!
//! Messages for taxonomy-covered failures use the exact phrasing reported by
//! the Kusto parser, so histograms can be built with plain string equality.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Half-open byte range into the analyzed source.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn empty_at(pos: usize) -> Self {
        Span {
            start: pos,
            end: pos,
        }
    }

    pub fn to(self, other: Span) -> Span {
        Span::new(self.start.min(other.start), self.end.max(other.end))
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

impl Serialize for Span {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.start, self.end].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Span {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [start, end] = <[usize; 2]>::deserialize(d)?;
        Ok(Span { start, end })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Syntax,
    Semantic,
}

/// Taxonomy bucket of a diagnostic.
///
/// The string keys are the union of the error strings observed in the
/// published syntax/semantic error tables, plus two artifact-specific keys
/// (`infix-operator-misuse` and `other`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    UnexpectedBacktick,
    IncompleteFragment,
    ExpectedSemicolon,
    ExpectedCloseParen,
    ExpectedOpenParen,
    ExpectedComma,
    MissingQuote,
    UnexpectedBackslash,
    MissingExpression,
    ColumnNameExpected,
    TimespanExpected,
    StringOrDynamicExpected,
    UnknownName,
    InfixOperatorMisuse,
    Other,
}

pub const MSG_UNEXPECTED_BACKTICK: &str = "Unexpected: `";
pub const MSG_INCOMPLETE_FRAGMENT: &str = "The incomplete fragment is unexpected.";
pub const MSG_EXPECTED_SEMICOLON: &str = "Expected: ;";
pub const MSG_EXPECTED_CLOSE_PAREN: &str = "Expected: )";
pub const MSG_EXPECTED_OPEN_PAREN: &str = "Expected: (";
pub const MSG_EXPECTED_COMMA: &str = "Expected: ,";
pub const MSG_MISSING_QUOTE: &str = "Missing: \"";
pub const MSG_UNEXPECTED_BACKSLASH: &str = "Unexpected: \\";
pub const MSG_MISSING_EXPRESSION: &str = "Missing expression";
pub const MSG_COLUMN_NAME_EXPECTED: &str = "Column name expected.";
pub const MSG_TIMESPAN_EXPECTED: &str = "A value of type timespan expected.";
pub const MSG_STRING_OR_DYNAMIC_EXPECTED: &str = "A value of type string or dynamic expected.";

const UNKNOWN_NAME_KEY: &str =
    "The name '<X>' does not refer to any known column, table, variable or function.";

/// Canonical message for an identifier that resolves to nothing in scope.
pub fn unknown_name_message(name: &str) -> String {
    format!("The name '{name}' does not refer to any known column, table, variable or function.")
}

impl Category {
    pub const ALL: [Category; 15] = [
        Category::UnexpectedBacktick,
        Category::IncompleteFragment,
        Category::ExpectedSemicolon,
        Category::ExpectedCloseParen,
        Category::ExpectedOpenParen,
        Category::ExpectedComma,
        Category::MissingQuote,
        Category::UnexpectedBackslash,
        Category::MissingExpression,
        Category::ColumnNameExpected,
        Category::TimespanExpected,
        Category::StringOrDynamicExpected,
        Category::UnknownName,
        Category::InfixOperatorMisuse,
        Category::Other,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Category::UnexpectedBacktick => MSG_UNEXPECTED_BACKTICK,
            Category::IncompleteFragment => MSG_INCOMPLETE_FRAGMENT,
            Category::ExpectedSemicolon => MSG_EXPECTED_SEMICOLON,
            Category::ExpectedCloseParen => MSG_EXPECTED_CLOSE_PAREN,
            Category::ExpectedOpenParen => MSG_EXPECTED_OPEN_PAREN,
            Category::ExpectedComma => MSG_EXPECTED_COMMA,
            Category::MissingQuote => MSG_MISSING_QUOTE,
            Category::UnexpectedBackslash => MSG_UNEXPECTED_BACKSLASH,
            Category::MissingExpression => MSG_MISSING_EXPRESSION,
            Category::ColumnNameExpected => MSG_COLUMN_NAME_EXPECTED,
            Category::TimespanExpected => MSG_TIMESPAN_EXPECTED,
            Category::StringOrDynamicExpected => MSG_STRING_OR_DYNAMIC_EXPECTED,
            Category::UnknownName => UNKNOWN_NAME_KEY,
            Category::InfixOperatorMisuse => "infix-operator-misuse",
            Category::Other => "other",
        }
    }

    pub fn from_key(key: &str) -> Option<Category> {
        Category::ALL.into_iter().find(|c| c.key() == key)
    }

    /// Best-effort mapping of a free-form message onto the taxonomy.
    pub fn for_message(message: &str) -> Category {
        if let Some(c) = Category::ALL
            .into_iter()
            .filter(|c| {
                !matches!(
                    c,
                    Category::UnknownName | Category::InfixOperatorMisuse | Category::Other
                )
            })
            .find(|c| c.key() == message)
        {
            return c;
        }
        if message.starts_with("The name '")
            && message
                .ends_with("' does not refer to any known column, table, variable or function.")
        {
            return Category::UnknownName;
        }
        Category::Other
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl Serialize for Category {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.key())
    }
}

impl<'de> Deserialize<'de> for Category {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let key = String::deserialize(d)?;
        Ok(Category::from_key(&key).unwrap_or(Category::Other))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
    pub category: Category,
    pub span: Span,
}

impl Diagnostic {
    /// Syntax diagnostic whose category is derived from the message.
    pub fn syntax(message: impl Into<String>, span: Span) -> Self {
        let message = message.into();
        Diagnostic {
            severity: Severity::Syntax,
            category: Category::for_message(&message),
            message,
            span,
        }
    }

    pub fn semantic(message: impl Into<String>, span: Span) -> Self {
        let message = message.into();
        Diagnostic {
            severity: Severity::Semantic,
            category: Category::for_message(&message),
            message,
            span,
        }
    }

    pub fn with_category(mut self, category: Category) -> Self {
        self.category = category;
        self
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?} error at {}..{}: {}",
            self.severity, self.span.start, self.span.end, self.message
        )
    }
}

/// Count diagnostics per taxonomy key.
pub fn classify_diagnostics<'a, I>(diags: I) -> BTreeMap<String, usize>
where
    I: IntoIterator<Item = &'a Diagnostic>,
{
    let mut counts = BTreeMap::new();
    for d in diags {
        *counts.entry(d.category.key().to_string()).or_insert(0) += 1;
    }
    counts
}
