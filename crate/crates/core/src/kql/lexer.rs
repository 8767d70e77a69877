use serde::{Deserialize, Serialize};

use super::diagnostic::{Diagnostic, Span, MSG_EXPECTED_CLOSE_PAREN, MSG_MISSING_QUOTE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenKind {
    Identifier,
    Keyword,
    StringLiteral,
    NumberLiteral,
    TimespanLiteral,
    DatetimeLiteral,
    Operator,
    Pipe,
    Punctuation,
    CodeFenceResidue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    pub span: Span,
}

impl Token {
    pub fn is(&self, kind: TokenKind, text: &str) -> bool {
        self.kind == kind && self.text == text
    }

    pub fn is_keyword(&self, text: &str) -> bool {
        self.is(TokenKind::Keyword, text)
    }

    pub fn is_punct(&self, text: &str) -> bool {
        self.is(TokenKind::Punctuation, text)
    }

    pub fn is_op(&self, text: &str) -> bool {
        self.is(TokenKind::Operator, text)
    }
}

pub const KEYWORDS: &[&str] = &[
    "and",
    "asc",
    "between",
    "by",
    "contains",
    "contains_cs",
    "count",
    "desc",
    "distinct",
    "endswith",
    "extend",
    "false",
    "first",
    "has",
    "has_all",
    "has_any",
    "has_cs",
    "in",
    "in~",
    "join",
    "kind",
    "last",
    "let",
    "limit",
    "matches",
    "not",
    "nulls",
    "on",
    "or",
    "order",
    "project",
    "regex",
    "sort",
    "startswith",
    "summarize",
    "take",
    "top",
    "true",
    "union",
    "where",
];

/// Operators that may be prefixed with `!` to negate them (`!contains`, `!in~`, ...).
pub const NEGATABLE_OPERATORS: &[&str] = &[
    "between",
    "contains",
    "contains_cs",
    "endswith",
    "has",
    "has_cs",
    "in",
    "in~",
    "startswith",
];

pub fn is_keyword(word: &str) -> bool {
    KEYWORDS.contains(&word)
}

const TIMESPAN_UNITS: &[&str] = &["ms", "d", "h", "m", "s"];

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
    tokens: Vec<Token>,
}

impl<'a> Lexer<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek_at(&self, offset: usize) -> Option<char> {
        self.src[self.pos..].chars().nth(offset)
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn push(&mut self, kind: TokenKind, start: usize) {
        self.tokens.push(Token {
            kind,
            text: self.src[start..self.pos].to_string(),
            span: Span::new(start, self.pos),
        });
    }

    fn skip_trivia(&mut self) {
        loop {
            let rest = self.rest();
            let trimmed = rest.trim_start();
            self.pos += rest.len() - trimmed.len();
            if self.rest().starts_with("//") {
                let line_len = self.rest().find('\n').unwrap_or(self.rest().len());
                self.pos += line_len;
            } else {
                break;
            }
        }
    }

    fn run(mut self) -> Result<Vec<Token>, Diagnostic> {
        loop {
            self.skip_trivia();
            let Some(c) = self.peek() else { break };
            let start = self.pos;
            match c {
                '`' => self.lex_fence(),
                '"' | '\'' => self.lex_string(start, c)?,
                '@' if matches!(self.peek_at(1), Some('"') | Some('\'')) => {
                    self.pos += 1;
                    let quote = self.peek().unwrap_or('"');
                    self.lex_string(start, quote)?;
                }
                '|' => {
                    self.pos += 1;
                    self.push(TokenKind::Pipe, start);
                }
                '(' | ')' | '[' | ']' | '{' | '}' | ',' | ';' | ':' => {
                    self.pos += 1;
                    self.push(TokenKind::Punctuation, start);
                }
                '.' if self.peek_at(1) == Some('.') => {
                    self.pos += 2;
                    self.push(TokenKind::Operator, start);
                }
                '.' => {
                    self.pos += 1;
                    self.push(TokenKind::Punctuation, start);
                }
                '0'..='9' => self.lex_number(start),
                '$' if self.peek_at(1).is_some_and(is_ident_start) => {
                    self.pos += 1;
                    self.eat_while(is_ident_continue);
                    self.push(TokenKind::Identifier, start);
                }
                c if is_ident_start(c) => self.lex_word(start)?,
                '!' => self.lex_bang(start),
                '=' | '<' | '>' | '+' | '-' | '*' | '/' | '%' => self.lex_operator(start, c),
                other => {
                    return Err(Diagnostic::syntax(
                        format!("Unexpected: {other}"),
                        Span::new(start, start + other.len_utf8()),
                    ));
                }
            }
        }
        Ok(self.tokens)
    }

    fn eat_while(&mut self, pred: impl Fn(char) -> bool) {
        while let Some(c) = self.peek() {
            if !pred(c) {
                break;
            }
            self.pos += c.len_utf8();
        }
    }

    fn lex_fence(&mut self) {
        let start = self.pos;
        self.eat_while(|c| c == '`');
        if self.pos - start >= 3 {
            // language tag of an opening fence, e.g. ```kusto
            self.eat_while(is_ident_continue);
        }
        self.push(TokenKind::CodeFenceResidue, start);
    }

    fn lex_string(&mut self, start: usize, quote: char) -> Result<(), Diagnostic> {
        let verbatim = self.src[start..].starts_with('@');
        self.pos += 1;
        loop {
            match self.peek() {
                None | Some('\n') => {
                    let message = if quote == '"' {
                        MSG_MISSING_QUOTE.to_string()
                    } else {
                        "Missing: '".to_string()
                    };
                    return Err(Diagnostic::syntax(message, Span::new(start, self.pos)));
                }
                Some('\\') if !verbatim => {
                    self.pos += 1;
                    if let Some(c) = self.peek() {
                        if c != '\n' {
                            self.pos += c.len_utf8();
                        }
                    }
                }
                Some(c) if c == quote => {
                    self.pos += 1;
                    if verbatim && self.peek() == Some(quote) {
                        // doubled quote inside a verbatim string
                        self.pos += 1;
                        continue;
                    }
                    break;
                }
                Some(c) => self.pos += c.len_utf8(),
            }
        }
        self.push(TokenKind::StringLiteral, start);
        Ok(())
    }

    fn lex_number(&mut self, start: usize) {
        self.eat_while(|c| c.is_ascii_digit());
        let integral = self.pos;
        let mut is_int = true;
        if self.peek() == Some('.') && self.peek_at(1).is_some_and(|c| c.is_ascii_digit()) {
            is_int = false;
            self.pos += 1;
            self.eat_while(|c| c.is_ascii_digit());
        }
        if matches!(self.peek(), Some('e') | Some('E')) {
            let mut ahead = 1;
            if matches!(self.peek_at(1), Some('+') | Some('-')) {
                ahead = 2;
            }
            if self.peek_at(ahead).is_some_and(|c| c.is_ascii_digit()) {
                is_int = false;
                self.pos += ahead;
                self.eat_while(|c| c.is_ascii_digit());
            }
        }
        if is_int && self.pos == integral {
            let rest = self.rest();
            let word_len = rest
                .find(|c: char| !is_ident_continue(c))
                .unwrap_or(rest.len());
            let word = &rest[..word_len];
            if TIMESPAN_UNITS.iter().any(|u| u.eq_ignore_ascii_case(word)) {
                self.pos += word_len;
                self.push(TokenKind::TimespanLiteral, start);
                return;
            }
        }
        self.push(TokenKind::NumberLiteral, start);
    }

    fn lex_word(&mut self, start: usize) -> Result<(), Diagnostic> {
        self.eat_while(is_ident_continue);
        let word = &self.src[start..self.pos];
        if word == "in" && self.peek() == Some('~') {
            self.pos += 1;
            self.push(TokenKind::Keyword, start);
            return Ok(());
        }
        if word == "datetime" {
            let save = self.pos;
            self.skip_inline_space();
            if self.peek() == Some('(') {
                return self.lex_datetime(start);
            }
            self.pos = save;
        }
        let kind = if is_keyword(word) {
            TokenKind::Keyword
        } else {
            TokenKind::Identifier
        };
        self.push(kind, start);
        Ok(())
    }

    fn skip_inline_space(&mut self) {
        self.eat_while(|c| c == ' ' || c == '\t');
    }

    /// `datetime(...)` is lexed as a single literal; its body may be quoted or bare.
    fn lex_datetime(&mut self, start: usize) -> Result<(), Diagnostic> {
        self.pos += 1; // (
        loop {
            match self.peek() {
                None | Some('\n') | Some('|') => {
                    return Err(Diagnostic::syntax(
                        MSG_EXPECTED_CLOSE_PAREN,
                        Span::empty_at(self.pos),
                    ));
                }
                Some(')') => {
                    self.pos += 1;
                    break;
                }
                Some(q @ ('"' | '\'')) => {
                    let s = self.pos;
                    self.lex_string(s, q)?;
                    // the nested string is part of the datetime token
                    self.tokens.pop();
                }
                Some(c) => self.pos += c.len_utf8(),
            }
        }
        self.push(TokenKind::DatetimeLiteral, start);
        Ok(())
    }

    fn lex_bang(&mut self, start: usize) {
        if matches!(self.peek_at(1), Some('=') | Some('~')) {
            self.pos += 2;
            self.push(TokenKind::Operator, start);
            return;
        }
        let rest = &self.rest()[1..];
        let mut word_len = rest
            .find(|c: char| !is_ident_continue(c))
            .unwrap_or(rest.len());
        if &rest[..word_len] == "in" && rest[word_len..].starts_with('~') {
            word_len += 1;
        }
        if NEGATABLE_OPERATORS.contains(&&rest[..word_len]) {
            self.pos += 1 + word_len;
        } else {
            self.pos += 1;
        }
        self.push(TokenKind::Operator, start);
    }

    fn lex_operator(&mut self, start: usize, c: char) {
        let two = matches!(
            (c, self.peek_at(1)),
            ('=', Some('='))
                | ('=', Some('~'))
                | ('<', Some('='))
                | ('>', Some('='))
                | ('<', Some('>'))
        );
        self.pos += if two { 2 } else { 1 };
        self.push(TokenKind::Operator, start);
    }
}

/// Split `source` into tokens, or report the first character that cannot start a token.
pub fn tokenize(source: &str) -> Result<Vec<Token>, Diagnostic> {
    Lexer {
        src: source,
        pos: 0,
        tokens: Vec::new(),
    }
    .run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kql::diagnostic::Category;

    fn kinds(src: &str) -> Vec<(TokenKind, String)> {
        tokenize(src)
            .unwrap()
            .into_iter()
            .map(|t| (t.kind, t.text))
            .collect()
    }

    #[test]
    fn device_ip_query_first_line_hand_tokenized() {
        use TokenKind::*;
        let expected: Vec<(TokenKind, String)> = [
            (Identifier, "DeviceNetworkEvents"),
            (Pipe, "|"),
            (Keyword, "where"),
            (Identifier, "Timestamp"),
            (Operator, ">="),
            (Identifier, "ago"),
            (Punctuation, "("),
            (TimespanLiteral, "7d"),
            (Punctuation, ")"),
        ]
        .into_iter()
        .map(|(k, s)| (k, s.to_string()))
        .collect();
        assert_eq!(
            kinds("DeviceNetworkEvents | where Timestamp >= ago(7d)"),
            expected
        );
    }

    #[test]
    fn empty_input() {
        assert!(tokenize("").unwrap().is_empty());
        assert!(tokenize("  \n\t").unwrap().is_empty());
    }

    #[test]
    fn unterminated_string() {
        let d = tokenize("| where x == \"abc").unwrap_err();
        assert_eq!(d.message, "Missing: \"");
        assert_eq!(d.category, Category::MissingQuote);
    }

    #[test]
    fn backslash_outside_string() {
        let d = tokenize("T | where x == \\n").unwrap_err();
        assert_eq!(d.message, "Unexpected: \\");
        assert_eq!(d.category, Category::UnexpectedBackslash);
    }

    #[test]
    fn fences_are_kept_as_residue() {
        let toks = tokenize("```kusto\nT | take 5\n```").unwrap();
        assert_eq!(toks[0].kind, TokenKind::CodeFenceResidue);
        assert_eq!(toks[0].text, "```kusto");
        assert_eq!(toks.last().unwrap().kind, TokenKind::CodeFenceResidue);
    }

    #[test]
    fn timespans_and_numbers() {
        use TokenKind::*;
        let toks = kinds("1d 5m 10ms 3s 2h 1.5 42 1e3 7days");
        assert_eq!(toks[0], (TimespanLiteral, "1d".into()));
        assert_eq!(toks[1], (TimespanLiteral, "5m".into()));
        assert_eq!(toks[2], (TimespanLiteral, "10ms".into()));
        assert_eq!(toks[3], (TimespanLiteral, "3s".into()));
        assert_eq!(toks[4], (TimespanLiteral, "2h".into()));
        assert_eq!(toks[5], (NumberLiteral, "1.5".into()));
        assert_eq!(toks[6], (NumberLiteral, "42".into()));
        assert_eq!(toks[7], (NumberLiteral, "1e3".into()));
        assert_eq!(toks[8], (NumberLiteral, "7".into()));
        assert_eq!(toks[9], (Identifier, "days".into()));
    }

    #[test]
    fn datetime_literals_swallow_their_body() {
        let toks = tokenize("datetime(2022-10-05 20:54:33) .. datetime(\" 2022-10-05T21:05:12Z\")")
            .unwrap();
        assert_eq!(toks.len(), 3);
        assert_eq!(toks[0].kind, TokenKind::DatetimeLiteral);
        assert_eq!(toks[0].text, "datetime(2022-10-05 20:54:33)");
        assert_eq!(toks[1].text, "..");
        assert_eq!(toks[2].text, "datetime(\" 2022-10-05T21:05:12Z\")");
    }

    #[test]
    fn negated_and_case_insensitive_operators() {
        let toks = kinds("a !contains b !in~ (1) c !~ d =~ e != f in~ (2)");
        let texts: Vec<&str> = toks.iter().map(|(_, s)| s.as_str()).collect();
        assert!(texts.contains(&"!contains"));
        assert!(texts.contains(&"!in~"));
        assert!(texts.contains(&"!~"));
        assert!(texts.contains(&"=~"));
        assert!(texts.contains(&"!="));
        assert!(texts.contains(&"in~"));
    }

    #[test]
    fn comments_are_trivia() {
        let toks = kinds("T // a comment\n| take 1");
        assert_eq!(toks.len(), 4);
    }

    #[test]
    fn join_side_identifiers() {
        let toks = kinds("on $left.DeviceId == $right.DeviceId");
        assert_eq!(toks[1], (TokenKind::Identifier, "$left".into()));
    }
}
