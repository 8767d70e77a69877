use super::ast::*;
use super::diagnostic::*;
use super::lexer::{tokenize, Token, TokenKind};

type PResult<T> = Result<T, Diagnostic>;

/// Stage keywords accepted after a pipe.
pub const STAGE_KEYWORDS: &[&str] = &[
    "where",
    "project",
    "extend",
    "summarize",
    "sort",
    "order",
    "top",
    "take",
    "limit",
    "count",
    "distinct",
    "join",
    "union",
];

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    src_len: usize,
    sources: Vec<String>,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_at(&self, n: usize) -> Option<&Token> {
        self.tokens.get(self.pos + n)
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        self.pos += 1;
        t
    }

    fn here(&self) -> Span {
        match self.peek() {
            Some(t) => t.span,
            None => Span::empty_at(self.src_len),
        }
    }

    fn at_eof(&self) -> bool {
        self.pos >= self.tokens.len()
    }

    fn at_pipe(&self) -> bool {
        self.peek().is_some_and(|t| t.kind == TokenKind::Pipe)
    }

    fn at_punct(&self, p: &str) -> bool {
        self.peek().is_some_and(|t| t.is_punct(p))
    }

    fn at_keyword(&self, k: &str) -> bool {
        self.peek().is_some_and(|t| t.is_keyword(k))
    }

    fn at_op(&self, o: &str) -> bool {
        self.peek().is_some_and(|t| t.is_op(o))
    }

    /// Error at the current token, preferring the fence-residue message when
    /// the offending token is a stray backtick run.
    fn error(&self, message: &str) -> Diagnostic {
        match self.peek() {
            Some(t) if t.kind == TokenKind::CodeFenceResidue => {
                Diagnostic::syntax(MSG_UNEXPECTED_BACKTICK, t.span)
            }
            _ => Diagnostic::syntax(message, self.here()),
        }
    }

    fn expect_punct(&mut self, p: &str, message: &str) -> PResult<Token> {
        if self.at_punct(p) {
            Ok(self.bump())
        } else {
            Err(self.error(message))
        }
    }

    fn expect_close_paren(&mut self) -> PResult<Token> {
        self.expect_punct(")", MSG_EXPECTED_CLOSE_PAREN)
    }

    fn ident(&mut self, message: &str) -> PResult<Ident> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Identifier => {
                let t = self.bump();
                Ok(Ident::new(t.text, t.span))
            }
            _ => Err(self.error(message)),
        }
    }

    // -- pipelines ---------------------------------------------------------

    fn query(&mut self) -> PResult<Pipeline> {
        let pipeline = self.pipeline()?;
        if self.at_punct(";") {
            self.bump();
            if !self.at_eof() {
                return Err(self.error(MSG_INCOMPLETE_FRAGMENT));
            }
        }
        if !self.at_eof() {
            return Err(self.error(MSG_EXPECTED_SEMICOLON));
        }
        Ok(pipeline)
    }

    fn pipeline(&mut self) -> PResult<Pipeline> {
        let source = match self.peek() {
            Some(t) if t.kind == TokenKind::Identifier => {
                let t = self.bump();
                self.sources.push(t.text.clone());
                Source::Table(Ident::new(t.text, t.span))
            }
            Some(t) if t.is_keyword("union") => {
                self.bump();
                Source::Union(self.union_operands()?)
            }
            _ => return Err(self.error(MSG_INCOMPLETE_FRAGMENT)),
        };
        let mut stages = Vec::new();
        while self.at_pipe() {
            self.bump();
            stages.push(self.stage()?);
        }
        Ok(Pipeline { source, stages })
    }

    fn stage(&mut self) -> PResult<Stage> {
        let Some(tok) = self.peek().cloned() else {
            return Err(self.error(MSG_INCOMPLETE_FRAGMENT));
        };
        if tok.kind != TokenKind::Keyword || !STAGE_KEYWORDS.contains(&tok.text.as_str()) {
            return Err(self.error(MSG_INCOMPLETE_FRAGMENT));
        }
        // hyphenated operators such as project-away are outside the subset
        if let Some(next) = self.peek_at(1) {
            if next.is_op("-") && next.span.start == tok.span.end {
                return Err(self.error(MSG_INCOMPLETE_FRAGMENT));
            }
        }
        self.bump();
        match tok.text.as_str() {
            "where" => Ok(Stage::Where(self.expr()?)),
            "project" => Ok(Stage::Project(self.named_list(true)?)),
            "extend" => Ok(Stage::Extend(self.named_list(true)?)),
            "summarize" => {
                let aggregates = if self.at_keyword("by") {
                    Vec::new()
                } else {
                    self.named_list(true)?
                };
                let by = if self.at_keyword("by") {
                    self.bump();
                    self.named_list(true)?
                } else {
                    Vec::new()
                };
                if aggregates.is_empty() && by.is_empty() {
                    return Err(self.error(MSG_MISSING_EXPRESSION));
                }
                Ok(Stage::Summarize { aggregates, by })
            }
            "sort" | "order" => {
                if !self.at_keyword("by") {
                    return Err(self.error("Expected: by"));
                }
                self.bump();
                let mut keys = vec![self.sort_key()?];
                while self.at_punct(",") {
                    self.bump();
                    keys.push(self.sort_key()?);
                }
                Ok(Stage::Sort(keys))
            }
            "top" => {
                let count = self.expr()?;
                if !self.at_keyword("by") {
                    return Err(self.error("Expected: by"));
                }
                self.bump();
                let by = self.sort_key()?;
                Ok(Stage::Top { count, by })
            }
            "take" | "limit" => Ok(Stage::Take(self.expr()?)),
            "count" => Ok(Stage::Count),
            "distinct" => {
                if self.at_op("*") {
                    self.bump();
                    Ok(Stage::Distinct(Vec::new()))
                } else {
                    Ok(Stage::Distinct(self.named_list(true)?))
                }
            }
            "join" => self.join(),
            "union" => {
                let kind = self.kind_param()?;
                let sources = self.union_operands()?;
                Ok(Stage::Union { kind, sources })
            }
            _ => unreachable!("stage keyword list and match arms agree"),
        }
    }

    fn kind_param(&mut self) -> PResult<Option<Ident>> {
        if self.at_keyword("kind") {
            self.bump();
            if !self.at_op("=") {
                return Err(self.error("Expected: ="));
            }
            self.bump();
            return Ok(Some(self.ident(MSG_INCOMPLETE_FRAGMENT)?));
        }
        Ok(None)
    }

    fn nested_operand(&mut self) -> PResult<Pipeline> {
        if self.at_punct("(") {
            self.bump();
            let p = self.pipeline()?;
            self.expect_close_paren()?;
            return Ok(p);
        }
        match self.peek() {
            Some(t) if t.kind == TokenKind::Identifier => {
                let t = self.bump();
                self.sources.push(t.text.clone());
                Ok(Pipeline {
                    source: Source::Table(Ident::new(t.text, t.span)),
                    stages: Vec::new(),
                })
            }
            _ => Err(self.error(MSG_INCOMPLETE_FRAGMENT)),
        }
    }

    fn union_operands(&mut self) -> PResult<Vec<Pipeline>> {
        let mut out = vec![self.nested_operand()?];
        while self.at_punct(",") {
            self.bump();
            out.push(self.nested_operand()?);
        }
        Ok(out)
    }

    fn join(&mut self) -> PResult<Stage> {
        let kind = self.kind_param()?;
        let right = self.nested_operand()?;
        if !self.at_keyword("on") {
            return Err(self.error("Expected: on"));
        }
        self.bump();
        let mut on = vec![self.join_key()?];
        while self.at_punct(",") {
            self.bump();
            on.push(self.join_key()?);
        }
        Ok(Stage::Join(Join { kind, right, on }))
    }

    fn join_key(&mut self) -> PResult<JoinKey> {
        let side = |p: &mut Parser, name: &str| -> PResult<Ident> {
            match p.peek() {
                Some(t) if t.kind == TokenKind::Identifier && t.text == name => {
                    p.bump();
                }
                _ => return Err(p.error(MSG_COLUMN_NAME_EXPECTED)),
            }
            p.expect_punct(".", MSG_COLUMN_NAME_EXPECTED)?;
            p.ident(MSG_COLUMN_NAME_EXPECTED)
        };
        if self.peek().is_some_and(|t| t.text == "$left") {
            let left = side(self, "$left")?;
            if !self.at_op("==") {
                return Err(self.error("Expected: =="));
            }
            self.bump();
            let right = side(self, "$right")?;
            return Ok(JoinKey::Sides { left, right });
        }
        Ok(JoinKey::Same(self.ident(MSG_COLUMN_NAME_EXPECTED)?))
    }

    fn sort_key(&mut self) -> PResult<SortKey> {
        let expr = self.expr()?;
        let order = if self.at_keyword("asc") {
            self.bump();
            Some(SortOrder::Asc)
        } else if self.at_keyword("desc") {
            self.bump();
            Some(SortOrder::Desc)
        } else {
            None
        };
        if self.at_keyword("nulls") {
            self.bump();
            if self.at_keyword("first") || self.at_keyword("last") {
                self.bump();
            } else {
                return Err(self.error(MSG_INCOMPLETE_FRAGMENT));
            }
        }
        Ok(SortKey { expr, order })
    }

    /// Comma-separated `[alias =] expr` items.
    fn named_list(&mut self, require_one: bool) -> PResult<Vec<NamedExpr>> {
        let mut items = Vec::new();
        loop {
            let starts_item = match self.peek() {
                None => false,
                Some(t) => {
                    !(t.kind == TokenKind::Pipe
                        || t.is_punct(",")
                        || t.is_punct(")")
                        || t.is_punct(";"))
                }
            };
            if !starts_item {
                if require_one || !items.is_empty() {
                    return Err(self.error(MSG_COLUMN_NAME_EXPECTED));
                }
                break;
            }
            let alias = match (self.peek(), self.peek_at(1)) {
                (Some(a), Some(eq)) if a.kind == TokenKind::Identifier && eq.is_op("=") => {
                    let a = self.bump();
                    self.bump();
                    Some(Ident::new(a.text, a.span))
                }
                _ => None,
            };
            let expr = self.expr()?;
            items.push(NamedExpr { alias, expr });
            if self.at_punct(",") {
                self.bump();
            } else {
                break;
            }
        }
        Ok(items)
    }

    // -- expressions -------------------------------------------------------

    fn expr(&mut self) -> PResult<Expr> {
        self.binary(1)
    }

    fn binary(&mut self, min_prec: u8) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.infix_op() {
            let prec = match op {
                Infix::Bin(b) => b.precedence(),
                Infix::List(_) | Infix::Between(_) => 3,
            };
            if prec < min_prec {
                break;
            }
            self.consume_infix(&op);
            lhs = match op {
                Infix::Bin(op) => {
                    let rhs = self.binary(prec + 1)?;
                    Expr::Binary {
                        op,
                        lhs: Box::new(lhs),
                        rhs: Box::new(rhs),
                    }
                }
                Infix::List(op) => {
                    self.expect_punct("(", MSG_EXPECTED_OPEN_PAREN)?;
                    let items = self.args_until_close()?;
                    Expr::InList {
                        op,
                        lhs: Box::new(lhs),
                        items,
                    }
                }
                Infix::Between(negated) => {
                    self.expect_punct("(", MSG_EXPECTED_OPEN_PAREN)?;
                    let low = self.binary(4)?;
                    if !self.at_op("..") {
                        return Err(self.error("Expected: .."));
                    }
                    self.bump();
                    let high = self.binary(4)?;
                    self.expect_close_paren()?;
                    Expr::Between {
                        negated,
                        lhs: Box::new(lhs),
                        low: Box::new(low),
                        high: Box::new(high),
                    }
                }
            };
        }
        Ok(lhs)
    }

    fn infix_op(&self) -> Option<Infix> {
        let t = self.peek()?;
        match t.kind {
            TokenKind::Keyword => match t.text.as_str() {
                "between" => Some(Infix::Between(false)),
                "matches" => self
                    .peek_at(1)
                    .filter(|n| n.is_keyword("regex"))
                    .map(|_| Infix::Bin(BinaryOp::MatchesRegex)),
                s => {
                    if let Some(l) = ListOp::from_symbol(s) {
                        // `has_any(` directly after an operand still reads as infix
                        Some(Infix::List(l))
                    } else {
                        BinaryOp::from_symbol(s).map(Infix::Bin)
                    }
                }
            },
            TokenKind::Operator => match t.text.as_str() {
                "!between" => Some(Infix::Between(true)),
                ".." | "=" => None,
                s => ListOp::from_symbol(s)
                    .map(Infix::List)
                    .or_else(|| BinaryOp::from_symbol(s).map(Infix::Bin)),
            },
            _ => None,
        }
    }

    fn consume_infix(&mut self, op: &Infix) {
        self.bump();
        if matches!(op, Infix::Bin(BinaryOp::MatchesRegex)) {
            self.bump();
        }
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.at_op("-") {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.at_op("+") {
            self.bump();
            return self.unary();
        }
        self.postfix()
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let mut e = self.primary()?;
        loop {
            if self.at_punct(".") {
                self.bump();
                let field = self.ident(MSG_COLUMN_NAME_EXPECTED)?;
                e = Expr::Member {
                    base: Box::new(e),
                    field,
                };
            } else if self.at_punct("[") {
                self.bump();
                let index = self.expr()?;
                self.expect_punct("]", "Expected: ]")?;
                e = Expr::Index {
                    base: Box::new(e),
                    index: Box::new(index),
                };
            } else {
                return Ok(e);
            }
        }
    }

    fn primary(&mut self) -> PResult<Expr> {
        let Some(t) = self.peek().cloned() else {
            return Err(self.error(MSG_MISSING_EXPRESSION));
        };
        let followed_by_paren = self.peek_at(1).is_some_and(|n| n.is_punct("("));
        let lit = |kind| {
            Expr::Literal(Literal {
                kind,
                text: t.text.clone(),
                span: t.span,
            })
        };
        match t.kind {
            TokenKind::StringLiteral => {
                self.bump();
                Ok(lit(LiteralKind::String))
            }
            TokenKind::NumberLiteral => {
                self.bump();
                let kind = if t.text.contains(['.', 'e', 'E']) {
                    LiteralKind::Real
                } else {
                    LiteralKind::Int
                };
                Ok(lit(kind))
            }
            TokenKind::TimespanLiteral => {
                self.bump();
                Ok(lit(LiteralKind::Timespan))
            }
            TokenKind::DatetimeLiteral => {
                self.bump();
                Ok(lit(LiteralKind::Datetime))
            }
            TokenKind::Keyword if t.text == "true" || t.text == "false" => {
                self.bump();
                Ok(lit(LiteralKind::Bool))
            }
            TokenKind::Identifier | TokenKind::Keyword if followed_by_paren => {
                self.bump();
                self.bump();
                let args = self.args_until_close()?;
                Ok(Expr::Call {
                    func: Ident::new(t.text, t.span),
                    args,
                })
            }
            TokenKind::Identifier => {
                self.bump();
                Ok(Expr::Column(Ident::new(t.text, t.span)))
            }
            TokenKind::Keyword if t.text == "not" => {
                self.bump();
                Err(self.error(MSG_EXPECTED_OPEN_PAREN))
            }
            TokenKind::Punctuation if t.text == "(" => {
                self.bump();
                let e = self.expr()?;
                self.expect_close_paren()?;
                Ok(e)
            }
            TokenKind::Punctuation if t.text == "[" => {
                self.bump();
                let mut items = Vec::new();
                if !self.at_punct("]") {
                    loop {
                        items.push(self.expr()?);
                        if self.at_punct(",") {
                            self.bump();
                        } else {
                            break;
                        }
                    }
                }
                self.expect_punct("]", "Expected: ]")?;
                Ok(Expr::Array(items))
            }
            TokenKind::Operator if t.text == "*" => {
                self.bump();
                Ok(Expr::Star)
            }
            TokenKind::CodeFenceResidue => Err(self.error(MSG_UNEXPECTED_BACKTICK)),
            TokenKind::Pipe => Err(self.error(MSG_MISSING_EXPRESSION)),
            TokenKind::Punctuation if matches!(t.text.as_str(), ")" | "," | ";" | "]") => {
                Err(self.error(MSG_MISSING_EXPRESSION))
            }
            _ => Err(Diagnostic::syntax(
                format!("Unexpected: {}", t.text),
                t.span,
            )),
        }
    }

    /// Argument list after an opening paren, through the matching `)`.
    fn args_until_close(&mut self) -> PResult<Vec<Expr>> {
        let mut args = Vec::new();
        if self.at_punct(")") {
            self.bump();
            return Ok(args);
        }
        loop {
            args.push(self.expr()?);
            if self.at_punct(",") {
                self.bump();
                continue;
            }
            if self.at_punct(")") {
                self.bump();
                return Ok(args);
            }
            let message = if self.at_eof() || self.at_pipe() {
                MSG_EXPECTED_CLOSE_PAREN
            } else {
                MSG_EXPECTED_COMMA
            };
            return Err(self.error(message));
        }
    }
}

enum Infix {
    Bin(BinaryOp),
    List(ListOp),
    Between(bool),
}

/// Parse a query in the supported subset.
///
/// Parsing stops at the first syntax error, so the error list has exactly
/// one entry on failure.
pub fn parse(source: &str) -> Result<QueryAst, Vec<Diagnostic>> {
    let tokens = tokenize(source).map_err(|d| vec![d])?;
    let mut p = Parser {
        tokens,
        pos: 0,
        src_len: source.len(),
        sources: Vec::new(),
    };
    let pipeline = p.query().map_err(|d| vec![d])?;
    Ok(QueryAst {
        sources: p.sources,
        pipeline,
        raw: source.to_string(),
    })
}
