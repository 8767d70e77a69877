//! KQL subset analysis: lexing, parsing, schema-aware validation and
//! structural extraction.

pub mod ast;
pub mod diagnostic;
pub mod lexer;
pub mod parser;
pub mod schema;
pub mod semantic;
pub mod shape;
pub mod strip;
pub mod test_corpus;

pub use ast::QueryAst;
pub use diagnostic::{classify_diagnostics, Category, Diagnostic, Severity, Span};
pub use lexer::{tokenize, Token, TokenKind};
pub use parser::parse;
pub use schema::{Column, ScalarType, SchemaCatalog};
pub use semantic::validate_semantics;
pub use shape::{extract_shape, extract_shape_tolerant, normalize_literal, QueryShape};
pub use strip::strip_model_decorations;

/// Parse then validate: syntax diagnostics if parsing fails, semantic ones otherwise.
pub fn analyze(source: &str, schema: &SchemaCatalog) -> Result<QueryAst, Vec<Diagnostic>> {
    let ast = parse(source)?;
    let diags = validate_semantics(&ast, schema);
    if diags.is_empty() {
        Ok(ast)
    } else {
        Err(diags)
    }
}

/// All diagnostics for `source`: the syntax error, or every semantic one.
pub fn diagnostics(source: &str, schema: &SchemaCatalog) -> Vec<Diagnostic> {
    match parse(source) {
        Ok(ast) => validate_semantics(&ast, schema),
        Err(d) => d,
    }
}
