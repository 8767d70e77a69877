//! Syntax tree for the supported KQL subset.
//!
//! Every node that names something carries a [`Span`] so semantic
//! diagnostics can point back into the source. Structural comparisons go
//! through [`QueryAst::structurally_eq`], which ignores spans and raw text.

use std::fmt;

use serde::Serialize;

use super::diagnostic::Span;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ident {
    pub name: String,
    #[serde(skip)]
    pub span: Span,
}

impl Ident {
    pub fn new(name: impl Into<String>, span: Span) -> Self {
        Ident {
            name: name.into(),
            span,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LiteralKind {
    String,
    Int,
    Real,
    Timespan,
    Datetime,
    Bool,
}

/// A literal as written; normalization happens at extraction time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Literal {
    pub kind: LiteralKind,
    pub text: String,
    #[serde(skip)]
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryOp {
    Or,
    And,
    Eq,
    NotEq,
    EqCi,
    NotEqCi,
    Lt,
    Le,
    Gt,
    Ge,
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Contains,
    NotContains,
    ContainsCs,
    NotContainsCs,
    Has,
    NotHas,
    HasCs,
    NotHasCs,
    StartsWith,
    NotStartsWith,
    EndsWith,
    NotEndsWith,
    MatchesRegex,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        use BinaryOp::*;
        match self {
            Or => "or",
            And => "and",
            Eq => "==",
            NotEq => "!=",
            EqCi => "=~",
            NotEqCi => "!~",
            Lt => "<",
            Le => "<=",
            Gt => ">",
            Ge => ">=",
            Add => "+",
            Sub => "-",
            Mul => "*",
            Div => "/",
            Mod => "%",
            Contains => "contains",
            NotContains => "!contains",
            ContainsCs => "contains_cs",
            NotContainsCs => "!contains_cs",
            Has => "has",
            NotHas => "!has",
            HasCs => "has_cs",
            NotHasCs => "!has_cs",
            StartsWith => "startswith",
            NotStartsWith => "!startswith",
            EndsWith => "endswith",
            NotEndsWith => "!endswith",
            MatchesRegex => "matches regex",
        }
    }

    pub fn from_symbol(sym: &str) -> Option<BinaryOp> {
        use BinaryOp::*;
        Some(match sym {
            "or" => Or,
            "and" => And,
            "==" => Eq,
            "!=" | "<>" => NotEq,
            "=~" => EqCi,
            "!~" => NotEqCi,
            "<" => Lt,
            "<=" => Le,
            ">" => Gt,
            ">=" => Ge,
            "+" => Add,
            "-" => Sub,
            "*" => Mul,
            "/" => Div,
            "%" => Mod,
            "contains" => Contains,
            "!contains" => NotContains,
            "contains_cs" => ContainsCs,
            "!contains_cs" => NotContainsCs,
            "has" => Has,
            "!has" => NotHas,
            "has_cs" => HasCs,
            "!has_cs" => NotHasCs,
            "startswith" => StartsWith,
            "!startswith" => NotStartsWith,
            "endswith" => EndsWith,
            "!endswith" => NotEndsWith,
            _ => return None,
        })
    }

    /// Binding strength; higher binds tighter.
    pub fn precedence(self) -> u8 {
        use BinaryOp::*;
        match self {
            Or => 1,
            And => 2,
            Add | Sub => 4,
            Mul | Div | Mod => 5,
            _ => 3,
        }
    }

    pub fn is_comparison(self) -> bool {
        self.precedence() == 3
    }

    /// Operators whose left operand must be a string (or dynamic) value.
    pub fn is_string_op(self) -> bool {
        use BinaryOp::*;
        matches!(
            self,
            Contains
                | NotContains
                | ContainsCs
                | NotContainsCs
                | Has
                | NotHas
                | HasCs
                | NotHasCs
                | StartsWith
                | NotStartsWith
                | EndsWith
                | NotEndsWith
                | MatchesRegex
                | EqCi
                | NotEqCi
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ListOp {
    In,
    NotIn,
    InCi,
    NotInCi,
    HasAny,
    HasAll,
}

impl ListOp {
    pub fn symbol(self) -> &'static str {
        match self {
            ListOp::In => "in",
            ListOp::NotIn => "!in",
            ListOp::InCi => "in~",
            ListOp::NotInCi => "!in~",
            ListOp::HasAny => "has_any",
            ListOp::HasAll => "has_all",
        }
    }

    pub fn from_symbol(sym: &str) -> Option<ListOp> {
        Some(match sym {
            "in" => ListOp::In,
            "!in" => ListOp::NotIn,
            "in~" => ListOp::InCi,
            "!in~" => ListOp::NotInCi,
            "has_any" => ListOp::HasAny,
            "has_all" => ListOp::HasAll,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "expr", rename_all = "snake_case")]
pub enum Expr {
    Column(Ident),
    Literal(Literal),
    Call {
        func: Ident,
        args: Vec<Expr>,
    },
    Neg(Box<Expr>),
    Binary {
        op: BinaryOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    InList {
        op: ListOp,
        lhs: Box<Expr>,
        items: Vec<Expr>,
    },
    Between {
        negated: bool,
        lhs: Box<Expr>,
        low: Box<Expr>,
        high: Box<Expr>,
    },
    /// `base.field`, used for `$left.Col` / `$right.Col` and dynamic access.
    Member {
        base: Box<Expr>,
        field: Ident,
    },
    Index {
        base: Box<Expr>,
        index: Box<Expr>,
    },
    Array(Vec<Expr>),
    /// `*` inside an argument list, e.g. `arg_max(Timestamp, *)`.
    Star,
}

impl Expr {
    pub fn span(&self) -> Span {
        match self {
            Expr::Column(id) => id.span,
            Expr::Literal(l) => l.span,
            Expr::Call { func, args } => args.iter().fold(func.span, |s, a| s.to(a.span())),
            Expr::Neg(e) => e.span(),
            Expr::Binary { lhs, rhs, .. } => lhs.span().to(rhs.span()),
            Expr::InList { lhs, items, .. } => items.iter().fold(lhs.span(), |s, a| s.to(a.span())),
            Expr::Between { lhs, high, .. } => lhs.span().to(high.span()),
            Expr::Member { base, field } => base.span().to(field.span),
            Expr::Index { base, index } => base.span().to(index.span()),
            Expr::Array(items) => items
                .iter()
                .map(Expr::span)
                .reduce(Span::to)
                .unwrap_or_default(),
            Expr::Star => Span::default(),
        }
    }

    /// Pre-order visit of this expression and all sub-expressions.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Column(_) | Expr::Literal(_) | Expr::Star => {}
            Expr::Call { args, .. } => args.iter().for_each(|a| a.walk(f)),
            Expr::Neg(e) => e.walk(f),
            Expr::Binary { lhs, rhs, .. } => {
                lhs.walk(f);
                rhs.walk(f);
            }
            Expr::InList { lhs, items, .. } => {
                lhs.walk(f);
                items.iter().for_each(|a| a.walk(f));
            }
            Expr::Between { lhs, low, high, .. } => {
                lhs.walk(f);
                low.walk(f);
                high.walk(f);
            }
            Expr::Member { base, .. } => base.walk(f),
            Expr::Index { base, index } => {
                base.walk(f);
                index.walk(f);
            }
            Expr::Array(items) => items.iter().for_each(|a| a.walk(f)),
        }
    }

    fn walk_mut(&mut self, f: &mut impl FnMut(&mut Expr)) {
        f(self);
        match self {
            Expr::Column(_) | Expr::Literal(_) | Expr::Star => {}
            Expr::Call { args, .. } => args.iter_mut().for_each(|a| a.walk_mut(f)),
            Expr::Neg(e) => e.walk_mut(f),
            Expr::Binary { lhs, rhs, .. } => {
                lhs.walk_mut(f);
                rhs.walk_mut(f);
            }
            Expr::InList { lhs, items, .. } => {
                lhs.walk_mut(f);
                items.iter_mut().for_each(|a| a.walk_mut(f));
            }
            Expr::Between { lhs, low, high, .. } => {
                lhs.walk_mut(f);
                low.walk_mut(f);
                high.walk_mut(f);
            }
            Expr::Member { base, .. } => base.walk_mut(f),
            Expr::Index { base, index } => {
                base.walk_mut(f);
                index.walk_mut(f);
            }
            Expr::Array(items) => items.iter_mut().for_each(|a| a.walk_mut(f)),
        }
    }

    fn clear_spans(&mut self) {
        self.walk_mut(&mut |e| match e {
            Expr::Column(id) => id.span = Span::default(),
            Expr::Literal(l) => l.span = Span::default(),
            Expr::Call { func, .. } => func.span = Span::default(),
            Expr::Member { field, .. } => field.span = Span::default(),
            _ => {}
        });
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary { op, .. } => op.precedence(),
            Expr::InList { .. } | Expr::Between { .. } => 3,
            Expr::Neg(_) => 6,
            _ => 7,
        }
    }
}

/// `[name =] expr` as used by project, extend, summarize and distinct.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedExpr {
    pub alias: Option<Ident>,
    pub expr: Expr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SortOrder {
    Asc,
    Desc,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SortKey {
    pub expr: Expr,
    pub order: Option<SortOrder>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Table(Ident),
    /// Leading `union A, B` form.
    Union(Vec<Pipeline>),
}

/// A tabular expression: a source followed by piped stages.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pipeline {
    pub source: Source,
    pub stages: Vec<Stage>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum JoinKey {
    /// `on Col`: same column name on both sides.
    Same(Ident),
    /// `on $left.A == $right.B`
    Sides { left: Ident, right: Ident },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Join {
    pub kind: Option<Ident>,
    pub right: Pipeline,
    pub on: Vec<JoinKey>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Where,
    Project,
    Extend,
    Summarize,
    Sort,
    Top,
    Take,
    Count,
    Distinct,
    Join,
    Union,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Where(Expr),
    Project(Vec<NamedExpr>),
    Extend(Vec<NamedExpr>),
    Summarize {
        aggregates: Vec<NamedExpr>,
        by: Vec<NamedExpr>,
    },
    Sort(Vec<SortKey>),
    Top {
        count: Expr,
        by: SortKey,
    },
    Take(Expr),
    Count,
    /// Empty list means `distinct *`.
    Distinct(Vec<NamedExpr>),
    Join(Join),
    Union {
        kind: Option<Ident>,
        sources: Vec<Pipeline>,
    },
}

impl Stage {
    pub fn kind(&self) -> StageKind {
        match self {
            Stage::Where(_) => StageKind::Where,
            Stage::Project(_) => StageKind::Project,
            Stage::Extend(_) => StageKind::Extend,
            Stage::Summarize { .. } => StageKind::Summarize,
            Stage::Sort(_) => StageKind::Sort,
            Stage::Top { .. } => StageKind::Top,
            Stage::Take(_) => StageKind::Take,
            Stage::Count => StageKind::Count,
            Stage::Distinct(_) => StageKind::Distinct,
            Stage::Join(_) => StageKind::Join,
            Stage::Union { .. } => StageKind::Union,
        }
    }
}

/// A parsed query. `sources` lists every table the query reads, in source
/// order: the leading table(s) first, then tables from join/union stages.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryAst {
    pub sources: Vec<String>,
    pub pipeline: Pipeline,
    #[serde(skip)]
    pub raw: String,
}

impl QueryAst {
    pub fn stages(&self) -> &[Stage] {
        &self.pipeline.stages
    }

    pub fn stage_kinds(&self) -> Vec<StageKind> {
        self.stages().iter().map(Stage::kind).collect()
    }

    /// Equality ignoring spans and the raw source text.
    pub fn structurally_eq(&self, other: &QueryAst) -> bool {
        let mut a = self.pipeline.clone();
        let mut b = other.pipeline.clone();
        a.clear_spans();
        b.clear_spans();
        self.sources == other.sources && a == b
    }

    /// Canonical single-line rendering.
    pub fn pretty(&self) -> String {
        self.pipeline.to_string()
    }
}

impl Pipeline {
    /// Pre-order visit of every sub-pipeline (including `self`).
    pub fn walk_pipelines<'a>(&'a self, f: &mut impl FnMut(&'a Pipeline)) {
        f(self);
        if let Source::Union(subs) = &self.source {
            subs.iter().for_each(|p| p.walk_pipelines(f));
        }
        for stage in &self.stages {
            match stage {
                Stage::Join(j) => j.right.walk_pipelines(f),
                Stage::Union { sources, .. } => sources.iter().for_each(|p| p.walk_pipelines(f)),
                _ => {}
            }
        }
    }

    fn clear_spans(&mut self) {
        match &mut self.source {
            Source::Table(id) => id.span = Span::default(),
            Source::Union(subs) => subs.iter_mut().for_each(Pipeline::clear_spans),
        }
        for stage in &mut self.stages {
            let clear_named = |items: &mut Vec<NamedExpr>| {
                for item in items {
                    if let Some(a) = &mut item.alias {
                        a.span = Span::default();
                    }
                    item.expr.clear_spans();
                }
            };
            match stage {
                Stage::Where(e) | Stage::Take(e) => e.clear_spans(),
                Stage::Project(items) | Stage::Extend(items) | Stage::Distinct(items) => {
                    clear_named(items)
                }
                Stage::Summarize { aggregates, by } => {
                    clear_named(aggregates);
                    clear_named(by);
                }
                Stage::Sort(keys) => keys.iter_mut().for_each(|k| k.expr.clear_spans()),
                Stage::Top { count, by } => {
                    count.clear_spans();
                    by.expr.clear_spans();
                }
                Stage::Count => {}
                Stage::Join(j) => {
                    if let Some(k) = &mut j.kind {
                        k.span = Span::default();
                    }
                    j.right.clear_spans();
                    for key in &mut j.on {
                        match key {
                            JoinKey::Same(id) => id.span = Span::default(),
                            JoinKey::Sides { left, right } => {
                                left.span = Span::default();
                                right.span = Span::default();
                            }
                        }
                    }
                }
                Stage::Union { kind, sources } => {
                    if let Some(k) = kind {
                        k.span = Span::default();
                    }
                    sources.iter_mut().for_each(Pipeline::clear_spans);
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Canonical printing

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Column(id) => f.write_str(&id.name),
            Expr::Literal(l) => f.write_str(&l.text),
            Expr::Star => f.write_str("*"),
            Expr::Call { func, args } => {
                write!(f, "{}(", func.name)?;
                write_list(f, args)?;
                f.write_str(")")
            }
            Expr::Neg(e) => {
                f.write_str("-")?;
                write_operand(f, e, 6, false)
            }
            Expr::Binary { op, lhs, rhs } => {
                let p = op.precedence();
                write_operand(f, lhs, p, false)?;
                write!(f, " {} ", op.symbol())?;
                write_operand(f, rhs, p, true)
            }
            Expr::InList { op, lhs, items } => {
                write_operand(f, lhs, 3, false)?;
                write!(f, " {} (", op.symbol())?;
                write_list(f, items)?;
                f.write_str(")")
            }
            Expr::Between {
                negated,
                lhs,
                low,
                high,
            } => {
                write_operand(f, lhs, 3, false)?;
                let kw = if *negated { "!between" } else { "between" };
                write!(f, " {kw} ({low} .. {high})")
            }
            Expr::Member { base, field } => {
                write_operand(f, base, 7, false)?;
                write!(f, ".{}", field.name)
            }
            Expr::Index { base, index } => {
                write_operand(f, base, 7, false)?;
                write!(f, "[{index}]")
            }
            Expr::Array(items) => {
                f.write_str("[")?;
                write_list(f, items)?;
                f.write_str("]")
            }
        }
    }
}

fn write_operand(f: &mut fmt::Formatter<'_>, e: &Expr, parent: u8, right: bool) -> fmt::Result {
    let p = e.precedence();
    // comparisons are non-associative, so an equal-precedence child always needs parens
    let needs = p < parent || (p == parent && (right || parent == 3));
    if needs {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

fn write_list(f: &mut fmt::Formatter<'_>, items: &[Expr]) -> fmt::Result {
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{item}")?;
    }
    Ok(())
}

impl fmt::Display for NamedExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(alias) = &self.alias {
            write!(f, "{} = ", alias.name)?;
        }
        write!(f, "{}", self.expr)
    }
}

fn write_named(f: &mut fmt::Formatter<'_>, items: &[NamedExpr]) -> fmt::Result {
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{item}")?;
    }
    Ok(())
}

impl fmt::Display for SortKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.expr)?;
        match self.order {
            Some(SortOrder::Asc) => f.write_str(" asc"),
            Some(SortOrder::Desc) => f.write_str(" desc"),
            None => Ok(()),
        }
    }
}

fn write_nested(f: &mut fmt::Formatter<'_>, p: &Pipeline) -> fmt::Result {
    match (&p.source, p.stages.is_empty()) {
        (Source::Table(id), true) => f.write_str(&id.name),
        _ => write!(f, "({p})"),
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.source {
            Source::Table(id) => f.write_str(&id.name)?,
            Source::Union(subs) => {
                f.write_str("union ")?;
                for (i, p) in subs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write_nested(f, p)?;
                }
            }
        }
        for stage in &self.stages {
            f.write_str(" | ")?;
            match stage {
                Stage::Where(e) => write!(f, "where {e}")?,
                Stage::Project(items) => {
                    f.write_str("project ")?;
                    write_named(f, items)?;
                }
                Stage::Extend(items) => {
                    f.write_str("extend ")?;
                    write_named(f, items)?;
                }
                Stage::Summarize { aggregates, by } => {
                    f.write_str("summarize")?;
                    if !aggregates.is_empty() {
                        f.write_str(" ")?;
                        write_named(f, aggregates)?;
                    }
                    if !by.is_empty() {
                        f.write_str(" by ")?;
                        write_named(f, by)?;
                    }
                }
                Stage::Sort(keys) => {
                    f.write_str("sort by ")?;
                    for (i, k) in keys.iter().enumerate() {
                        if i > 0 {
                            f.write_str(", ")?;
                        }
                        write!(f, "{k}")?;
                    }
                }
                Stage::Top { count, by } => write!(f, "top {count} by {by}")?,
                Stage::Take(n) => write!(f, "take {n}")?,
                Stage::Count => f.write_str("count")?,
                Stage::Distinct(items) => {
                    f.write_str("distinct ")?;
                    if items.is_empty() {
                        f.write_str("*")?;
                    } else {
                        write_named(f, items)?;
                    }
                }
                Stage::Join(j) => {
                    f.write_str("join ")?;
                    if let Some(kind) = &j.kind {
                        write!(f, "kind={} ", kind.name)?;
                    }
                    write_nested(f, &j.right)?;
                    f.write_str(" on ")?;
                    for (i, key) in j.on.iter().enumerate() {
                        if i > 0 {
                            f.write_str(", ")?;
                        }
                        match key {
                            JoinKey::Same(id) => f.write_str(&id.name)?,
                            JoinKey::Sides { left, right } => {
                                write!(f, "$left.{} == $right.{}", left.name, right.name)?
                            }
                        }
                    }
                }
                Stage::Union { kind, sources } => {
                    f.write_str("union ")?;
                    if let Some(kind) = kind {
                        write!(f, "kind={} ", kind.name)?;
                    }
                    for (i, p) in sources.iter().enumerate() {
                        if i > 0 {
                            f.write_str(", ")?;
                        }
                        write_nested(f, p)?;
                    }
                }
            }
        }
        Ok(())
    }
}
