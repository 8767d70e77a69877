//! Schema-aware validation: name resolution with per-stage column scope,
//! operand type checks, and infix-only operator misuse.

use super::ast::*;
use super::diagnostic::*;
use super::schema::{ScalarType, SchemaCatalog};

/// `None` means the type could not be inferred; such values are never
/// reported as mismatches.
type Ty = Option<ScalarType>;

/// Operators that KQL only accepts in infix position.
pub const INFIX_ONLY_OPERATORS: &[&str] = &[
    "contains",
    "contains_cs",
    "has",
    "has_cs",
    "has_any",
    "has_all",
    "in",
    "in~",
    "between",
    "startswith",
    "endswith",
];

/// Columns visible at a point in the pipeline.
#[derive(Debug, Clone, Default)]
struct Scope {
    cols: Vec<(String, Ty)>,
    /// Set after an unresolvable source: every column reference is accepted.
    open: bool,
}

impl Scope {
    fn open() -> Self {
        Scope {
            cols: Vec::new(),
            open: true,
        }
    }

    fn get(&self, name: &str) -> Option<Ty> {
        self.cols.iter().find(|(n, _)| n == name).map(|(_, t)| *t)
    }

    fn contains(&self, name: &str) -> bool {
        self.open || self.get(name).is_some()
    }

    fn insert(&mut self, name: String, ty: Ty) {
        match self.cols.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = ty,
            None => self.cols.push((name, ty)),
        }
    }

    fn absorb(&mut self, other: Scope) {
        self.open |= other.open;
        for (n, t) in other.cols {
            if self.get(&n).is_none() {
                self.cols.push((n, t));
            }
        }
    }
}

struct Validator<'a> {
    schema: &'a SchemaCatalog,
    diags: Vec<Diagnostic>,
}

/// Validate a parsed query against `schema`; an empty result means the
/// query is semantically valid.
pub fn validate_semantics(ast: &QueryAst, schema: &SchemaCatalog) -> Vec<Diagnostic> {
    let mut v = Validator {
        schema,
        diags: Vec::new(),
    };
    v.pipeline(&ast.pipeline);
    v.diags
}

impl Validator<'_> {
    fn report(&mut self, message: impl Into<String>, span: Span) {
        self.diags.push(Diagnostic::semantic(message, span));
    }

    fn table_scope(&mut self, table: &Ident) -> Scope {
        match self.schema.columns(&table.name) {
            Some(cols) => Scope {
                cols: cols.iter().map(|c| (c.name.clone(), Some(c.ty))).collect(),
                open: false,
            },
            None => {
                self.report(unknown_name_message(&table.name), table.span);
                Scope::open()
            }
        }
    }

    fn pipeline(&mut self, p: &Pipeline) -> Scope {
        let mut scope = match &p.source {
            Source::Table(t) => self.table_scope(t),
            Source::Union(subs) => {
                let mut s = Scope::default();
                for sub in subs {
                    let sub_scope = self.pipeline(sub);
                    s.absorb(sub_scope);
                }
                s
            }
        };
        for stage in &p.stages {
            scope = self.stage(stage, scope);
        }
        scope
    }

    fn stage(&mut self, stage: &Stage, scope: Scope) -> Scope {
        match stage {
            Stage::Where(e) => {
                self.expr(e, &scope);
                scope
            }
            Stage::Project(items) => {
                let mut out = Scope::default();
                for (i, item) in items.iter().enumerate() {
                    let ty = self.expr(&item.expr, &scope);
                    out.insert(output_name(item, i), ty);
                }
                out
            }
            Stage::Extend(items) => {
                let mut out = scope.clone();
                for (i, item) in items.iter().enumerate() {
                    let ty = self.expr(&item.expr, &scope);
                    out.insert(output_name(item, i), ty);
                }
                out
            }
            Stage::Summarize { aggregates, by } => {
                let mut out = Scope::default();
                for (i, item) in by.iter().enumerate() {
                    let ty = self.expr(&item.expr, &scope);
                    out.insert(output_name(item, i), ty);
                }
                for (i, item) in aggregates.iter().enumerate() {
                    self.aggregate(item, i, &scope, &mut out);
                }
                out
            }
            Stage::Sort(keys) => {
                for k in keys {
                    self.expr(&k.expr, &scope);
                }
                scope
            }
            Stage::Top { count, by } => {
                self.expr(count, &scope);
                self.expr(&by.expr, &scope);
                scope
            }
            Stage::Take(n) => {
                self.expr(n, &scope);
                scope
            }
            Stage::Count => Scope {
                cols: vec![("Count".to_string(), Some(ScalarType::Long))],
                open: false,
            },
            Stage::Distinct(items) => {
                if items.is_empty() {
                    return scope;
                }
                let mut out = Scope::default();
                for (i, item) in items.iter().enumerate() {
                    let ty = self.expr(&item.expr, &scope);
                    out.insert(output_name(item, i), ty);
                }
                out
            }
            Stage::Join(j) => self.join(j, scope),
            Stage::Union { sources, .. } => {
                let mut out = scope;
                for sub in sources {
                    let sub_scope = self.pipeline(sub);
                    out.absorb(sub_scope);
                }
                out
            }
        }
    }

    fn aggregate(&mut self, item: &NamedExpr, index: usize, input: &Scope, out: &mut Scope) {
        if let Expr::Call { func, args } = &item.expr {
            if matches!(func.name.as_str(), "arg_max" | "arg_min") && item.alias.is_none() {
                // arg_max/arg_min emit their argument columns, or all columns for `*`
                for arg in args {
                    match arg {
                        Expr::Star => {
                            for (n, t) in &input.cols {
                                out.insert(n.clone(), *t);
                            }
                            out.open |= input.open;
                        }
                        Expr::Column(id) => {
                            let ty = self.expr(arg, input);
                            out.insert(id.name.clone(), ty);
                        }
                        other => {
                            self.expr(other, input);
                        }
                    }
                }
                return;
            }
        }
        let ty = self.expr(&item.expr, input);
        let name = match (&item.alias, &item.expr) {
            (Some(a), _) => a.name.clone(),
            (None, Expr::Call { func, args }) => {
                let col = args.iter().find_map(|a| match a {
                    Expr::Column(id) => Some(id.name.as_str()),
                    _ => None,
                });
                format!("{}_{}", func.name, col.unwrap_or(""))
            }
            (None, _) => output_name(item, index),
        };
        out.insert(name, ty);
    }

    fn join(&mut self, j: &Join, left: Scope) -> Scope {
        let right = self.pipeline(&j.right);
        for key in &j.on {
            match key {
                JoinKey::Same(id) => {
                    if !left.contains(&id.name) || !right.contains(&id.name) {
                        self.report(unknown_name_message(&id.name), id.span);
                    }
                }
                JoinKey::Sides { left: l, right: r } => {
                    if !left.contains(&l.name) {
                        self.report(unknown_name_message(&l.name), l.span);
                    }
                    if !right.contains(&r.name) {
                        self.report(unknown_name_message(&r.name), r.span);
                    }
                }
            }
        }
        let kind = j
            .kind
            .as_ref()
            .map(|k| k.name.as_str())
            .unwrap_or("innerunique");
        match kind {
            "leftanti" | "anti" | "leftantisemi" | "leftsemi" | "semi" => left,
            "rightanti" | "rightantisemi" | "rightsemi" => right,
            _ => {
                let shared: Vec<&str> =
                    j.on.iter()
                        .filter_map(|k| match k {
                            JoinKey::Same(id) => Some(id.name.as_str()),
                            JoinKey::Sides { .. } => None,
                        })
                        .collect();
                let mut out = left;
                out.open |= right.open;
                for (n, t) in right.cols {
                    if out.get(&n).is_none() {
                        out.cols.push((n, t));
                    } else if !shared.contains(&n.as_str()) {
                        let renamed = format!("{n}1");
                        if out.get(&renamed).is_none() {
                            out.cols.push((renamed, t));
                        }
                    }
                }
                out
            }
        }
    }

    fn column(&mut self, id: &Ident, scope: &Scope) -> Ty {
        match scope.get(&id.name) {
            Some(t) => t,
            None if scope.open => None,
            None => {
                self.report(unknown_name_message(&id.name), id.span);
                None
            }
        }
    }

    fn expr(&mut self, e: &Expr, scope: &Scope) -> Ty {
        match e {
            Expr::Column(id) => self.column(id, scope),
            Expr::Literal(l) => Some(literal_type(l.kind)),
            Expr::Star => None,
            Expr::Array(items) => {
                for i in items {
                    self.expr(i, scope);
                }
                Some(ScalarType::Dynamic)
            }
            Expr::Neg(inner) => self.expr(inner, scope),
            Expr::Member { base, .. } => {
                self.expr(base, scope);
                Some(ScalarType::Dynamic)
            }
            Expr::Index { base, index } => {
                self.expr(base, scope);
                self.expr(index, scope);
                Some(ScalarType::Dynamic)
            }
            Expr::Call { func, args } => self.call(func, args, scope),
            Expr::Binary { op, lhs, rhs } => self.binary(*op, lhs, rhs, scope),
            Expr::InList { op, lhs, items } => {
                let lt = self.expr(lhs, scope);
                for i in items {
                    self.expr(i, scope);
                }
                if matches!(op, ListOp::HasAny | ListOp::HasAll) && !is_stringish(lt) {
                    self.report(MSG_STRING_OR_DYNAMIC_EXPECTED, lhs.span());
                }
                Some(ScalarType::Bool)
            }
            Expr::Between { lhs, low, high, .. } => {
                let lt = self.expr(lhs, scope);
                let lo = self.expr(low, scope);
                let hi = self.expr(high, scope);
                let bad = [(lo, low), (hi, high)]
                    .into_iter()
                    .find(|(t, _)| incompatible(lt, *t));
                if let Some((bt, bound)) = bad {
                    self.mismatch(lt, bt, bound.span());
                }
                Some(ScalarType::Bool)
            }
        }
    }

    fn mismatch(&mut self, expected: Ty, _found: Ty, span: Span) {
        match expected {
            Some(ScalarType::Timespan) => self.report(MSG_TIMESPAN_EXPECTED, span),
            Some(t) => self.report(format!("A value of type {t} expected."), span),
            None => {}
        }
    }

    fn binary(&mut self, op: BinaryOp, lhs: &Expr, rhs: &Expr, scope: &Scope) -> Ty {
        let lt = self.expr(lhs, scope);
        let rt = self.expr(rhs, scope);
        use BinaryOp::*;
        match op {
            And | Or => Some(ScalarType::Bool),
            _ if op.is_string_op() => {
                if !is_stringish(lt) {
                    self.report(MSG_STRING_OR_DYNAMIC_EXPECTED, lhs.span());
                }
                Some(ScalarType::Bool)
            }
            Eq | NotEq | Lt | Le | Gt | Ge => {
                if incompatible(lt, rt) {
                    // report against the side that breaks the timespan/datetime context
                    if rt == Some(ScalarType::Timespan) {
                        self.mismatch(rt, lt, lhs.span());
                    } else {
                        self.mismatch(lt, rt, rhs.span());
                    }
                }
                Some(ScalarType::Bool)
            }
            Add | Sub | Mul | Div | Mod => arithmetic(op, lt, rt),
            _ => Some(ScalarType::Bool),
        }
    }

    fn call(&mut self, func: &Ident, args: &[Expr], scope: &Scope) -> Ty {
        let name = func.name.as_str();
        let arg_types: Vec<Ty> = args.iter().map(|a| self.expr(a, scope)).collect();
        if INFIX_ONLY_OPERATORS.contains(&name) {
            self.diags.push(
                Diagnostic::semantic(unknown_name_message(name), func.span)
                    .with_category(Category::InfixOperatorMisuse),
            );
            return Some(ScalarType::Bool);
        }
        let first = arg_types.first().copied().flatten();
        match name {
            "ago" => {
                match (args.first(), first) {
                    (None, _) => self.report(MSG_TIMESPAN_EXPECTED, func.span),
                    (Some(a), Some(t)) if t != ScalarType::Timespan => {
                        self.report(MSG_TIMESPAN_EXPECTED, a.span())
                    }
                    _ => {}
                }
                Some(ScalarType::Datetime)
            }
            "now" | "datetime_add" | "startofday" | "startofweek" | "startofmonth"
            | "startofyear" | "endofday" | "endofweek" | "endofmonth" | "todatetime"
            | "make_datetime" => Some(ScalarType::Datetime),
            "totimespan" | "dayofweek" => Some(ScalarType::Timespan),
            "bin" | "floor" | "min" | "max" | "sum" | "any" | "take_any" | "coalesce" | "minif"
            | "maxif" | "sumif" => first,
            "iff" | "iif" => arg_types.get(1).copied().flatten(),
            "tostring"
            | "strcat"
            | "strcat_delim"
            | "tolower"
            | "toupper"
            | "substring"
            | "trim"
            | "trim_start"
            | "trim_end"
            | "extract"
            | "replace_string"
            | "replace_regex"
            | "format_datetime"
            | "format_timespan"
            | "tohex"
            | "parse_path"
            | "url_decode"
            | "base64_decode_tostring" => Some(ScalarType::String),
            "toint" => Some(ScalarType::Int),
            "tolong" | "strlen" | "countof" | "count" | "dcount" | "countif" | "dcountif"
            | "datetime_part" | "hourofday" | "array_length" | "getyear" | "getmonth" => {
                Some(ScalarType::Long)
            }
            "todouble" | "toreal" | "avg" | "avgif" | "percentile" | "stdev" | "variance"
            | "round" => Some(ScalarType::Real),
            "tobool" | "isempty" | "isnotempty" | "isnull" | "isnotnull" | "not"
            | "ipv4_is_private" | "ipv4_is_in_range" | "ipv4_is_match" | "has_any_index" => {
                Some(ScalarType::Bool)
            }
            "parse_json" | "todynamic" | "dynamic" | "pack" | "bag_pack" | "pack_array"
            | "split" | "make_set" | "make_list" | "make_bag" | "parse_url" | "extract_all" => {
                Some(ScalarType::Dynamic)
            }
            _ => None,
        }
    }
}

fn literal_type(kind: LiteralKind) -> ScalarType {
    match kind {
        LiteralKind::String => ScalarType::String,
        LiteralKind::Int => ScalarType::Long,
        LiteralKind::Real => ScalarType::Real,
        LiteralKind::Timespan => ScalarType::Timespan,
        LiteralKind::Datetime => ScalarType::Datetime,
        LiteralKind::Bool => ScalarType::Bool,
    }
}

fn is_stringish(t: Ty) -> bool {
    matches!(
        t,
        None | Some(ScalarType::String) | Some(ScalarType::Dynamic)
    )
}

/// Whether comparing `a` with `b` violates the timespan/datetime rules.
fn incompatible(a: Ty, b: Ty) -> bool {
    let (Some(a), Some(b)) = (a, b) else {
        return false;
    };
    if a == ScalarType::Dynamic || b == ScalarType::Dynamic {
        return false;
    }
    let temporal = |t: ScalarType| matches!(t, ScalarType::Timespan | ScalarType::Datetime);
    (temporal(a) || temporal(b)) && a != b
}

fn arithmetic(op: BinaryOp, lt: Ty, rt: Ty) -> Ty {
    use ScalarType::*;
    let (l, r) = (lt?, rt?);
    match (op, l, r) {
        (BinaryOp::Add | BinaryOp::Sub, Datetime, Timespan) => Some(Datetime),
        (BinaryOp::Add, Timespan, Datetime) => Some(Datetime),
        (BinaryOp::Sub, Datetime, Datetime) => Some(Timespan),
        (BinaryOp::Add | BinaryOp::Sub, Timespan, Timespan) => Some(Timespan),
        (BinaryOp::Mul | BinaryOp::Div, Timespan, t) if t.is_numeric() => Some(Timespan),
        (_, a, b) if a.is_numeric() && b.is_numeric() => {
            if a == Real || b == Real {
                Some(Real)
            } else {
                Some(Long)
            }
        }
        _ => None,
    }
}

/// Output column name of a `[alias =] expr` item.
pub(crate) fn output_name(item: &NamedExpr, index: usize) -> String {
    if let Some(a) = &item.alias {
        return a.name.clone();
    }
    match &item.expr {
        Expr::Column(id) => id.name.clone(),
        Expr::Member { field, .. } => field.name.clone(),
        Expr::Call { func, args } if func.name == "bin" || func.name == "floor" => {
            match args.first() {
                Some(Expr::Column(id)) => id.name.clone(),
                _ => format!("Column{}", index + 1),
            }
        }
        _ => format!("Column{}", index + 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kql::parse;
    use crate::kql::schema::Column;
    use crate::kql::test_corpus::*;

    fn schema() -> SchemaCatalog {
        use ScalarType::*;
        let mut s = SchemaCatalog::new();
        s.add_table(
            "DeviceNetworkEvents",
            vec![
                Column::new("Timestamp", Datetime),
                Column::new("DeviceId", String),
                Column::new("ActionType", String),
                Column::new("LocalIP", String),
                Column::new("RemotePort", Int),
                Column::new("Duration", Timespan),
            ],
        )
        .unwrap();
        s.add_table(
            "EmailEvents",
            vec![
                Column::new("Timestamp", Datetime),
                Column::new("NetworkMessageId", String),
                Column::new("SenderMailFromAddress", String),
                Column::new("RecipientEmailAddress", String),
                Column::new("Subject", String),
                Column::new("ThreatTypes", String),
                Column::new("DetectionMethods", String),
                Column::new("EmailActionPolicy", String),
                Column::new("AttachmentCount", Int),
            ],
        )
        .unwrap();
        s
    }

    fn diags(src: &str) -> Vec<Diagnostic> {
        validate_semantics(&parse(src).unwrap(), &schema())
    }

    #[test]
    fn reference_queries_are_valid() {
        assert_eq!(diags(DEVICE_IP_QUERY), vec![]);
        assert_eq!(diags(PHISH_WINDOW_QUERY), vec![]);
    }

    #[test]
    fn has_any_call_form_is_flagged() {
        let d = diags(HAS_ANY_CALL_QUERY);
        assert!(!d.is_empty());
        let misuse: Vec<_> = d
            .iter()
            .filter(|d| d.category == Category::InfixOperatorMisuse)
            .collect();
        assert_eq!(misuse.len(), 1);
        assert_eq!(
            &HAS_ANY_CALL_QUERY[misuse[0].span.start..misuse[0].span.end],
            "has_any"
        );
    }

    #[test]
    fn projected_away_column_is_unknown() {
        let src = "EmailEvents | project Subject | where SenderMailFromAddress == \"x\"";
        let d = diags(src);
        assert_eq!(d.len(), 1);
        assert_eq!(
            d[0].message,
            "The name 'SenderMailFromAddress' does not refer to any known column, table, variable or function."
        );
        assert_eq!(
            &src[d[0].span.start..d[0].span.end],
            "SenderMailFromAddress"
        );
    }

    #[test]
    fn unknown_column_message() {
        let d = diags("EmailEvents | where FileName == \"a.exe\"");
        assert_eq!(
            d[0].message,
            "The name 'FileName' does not refer to any known column, table, variable or function."
        );
        assert_eq!(d[0].category, Category::UnknownName);
        assert_eq!(d[0].severity, Severity::Semantic);
    }

    #[test]
    fn unknown_table_does_not_cascade() {
        let d = diags("NoSuchTable | where A == 1 | project B");
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].category, Category::UnknownName);
    }

    #[test]
    fn ago_requires_timespan() {
        let d = diags("EmailEvents | where Timestamp > ago(\"7\")");
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].message, "A value of type timespan expected.");
        assert_eq!(
            diags("EmailEvents | where Timestamp > ago(7)")[0].message,
            MSG_TIMESPAN_EXPECTED
        );
    }

    #[test]
    fn timespan_comparisons() {
        assert!(diags("DeviceNetworkEvents | where Duration > 5m").is_empty());
        let d = diags("DeviceNetworkEvents | where RemotePort > 5m");
        assert_eq!(d[0].message, MSG_TIMESPAN_EXPECTED);
        assert!(!diags("DeviceNetworkEvents | where Timestamp > 5m").is_empty());
        assert!(diags("DeviceNetworkEvents | where Timestamp > ago(1h) + 5m").is_empty());
    }

    #[test]
    fn string_operator_needs_string_operand() {
        let d = diags("EmailEvents | where AttachmentCount has \"1\"");
        assert_eq!(d[0].message, MSG_STRING_OR_DYNAMIC_EXPECTED);
        assert!(diags("EmailEvents | where Subject has_any (\"a\", \"b\")").is_empty());
    }

    #[test]
    fn infix_call_form_is_misuse() {
        let d = diags("EmailEvents | where has_any(Subject, \"a\")");
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].category, Category::InfixOperatorMisuse);
        let d = diags("EmailEvents | where contains(Subject, \"a\")");
        assert_eq!(d[0].category, Category::InfixOperatorMisuse);
    }

    #[test]
    fn summarize_scope_and_default_alias() {
        assert!(diags("EmailEvents | summarize count() by Subject | where count_ > 1").is_empty());
        assert!(
            diags("EmailEvents | summarize dcount(Subject) | project dcount_Subject").is_empty()
        );
        assert!(diags(
            "EmailEvents | summarize n = count() by bin(Timestamp, 1h) | project Timestamp, n"
        )
        .is_empty());
        let d = diags("EmailEvents | summarize count() by Subject | project Timestamp");
        assert_eq!(d.len(), 1);
        assert!(diags(
            "EmailEvents | summarize arg_max(Timestamp, *) by Subject | project ThreatTypes"
        )
        .is_empty());
    }

    #[test]
    fn extend_and_count_scope() {
        assert!(diags(
            "EmailEvents | extend S = strlen(Subject) | where S > 10 | project S, Subject"
        )
        .is_empty());
        assert!(diags("EmailEvents | count | where Count > 0").is_empty());
        assert_eq!(diags("EmailEvents | count | project Subject").len(), 1);
    }

    #[test]
    fn join_widens_scope() {
        let src = "EmailEvents | join (DeviceNetworkEvents | project DeviceId, RemotePort) on $left.Subject == $right.DeviceId | project Subject, RemotePort, Timestamp";
        assert!(diags(src).is_empty(), "{:?}", diags(src));
        let d = diags("EmailEvents | join DeviceNetworkEvents on Subject");
        assert_eq!(d.len(), 1);
        assert!(diags(
            "EmailEvents | join kind=leftanti DeviceNetworkEvents on Timestamp | project Subject"
        )
        .is_empty());
        assert_eq!(diags("EmailEvents | join kind=leftanti DeviceNetworkEvents on Timestamp | project LocalIP").len(), 1);
    }

    #[test]
    fn union_scope() {
        assert!(
            diags("union EmailEvents, DeviceNetworkEvents | project Subject, LocalIP").is_empty()
        );
        assert!(
            diags("EmailEvents | union DeviceNetworkEvents | where RemotePort == 1").is_empty()
        );
    }

    #[test]
    fn distinct_narrows() {
        assert_eq!(
            diags("EmailEvents | distinct Subject | project Timestamp").len(),
            1
        );
        assert!(diags("EmailEvents | distinct * | project Timestamp").is_empty());
    }

    #[test]
    fn validation_is_deterministic() {
        for src in VALID_CORPUS {
            let ast = parse(src).unwrap();
            assert_eq!(
                validate_semantics(&ast, &schema()),
                validate_semantics(&ast, &schema())
            );
        }
    }
}
