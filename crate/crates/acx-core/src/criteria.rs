//! Predicate DSL for falsification criteria.
//!
//! Grammar:
//! ```text
//! expr    := or
//! or      := and ('or' and)*
//! and     := unary ('and' unary)*
//! unary   := 'not' unary | '(' expr ')' | cmp
//! cmp     := operand op operand
//! operand := metric | abs(metric - metric) | number
//! op      := < | <= | > | >= | ==
//! metric  := dotted identifier, e.g. pretrend.p
//! ```
//! `abs(x - y)` is the single allowed function; there is no other arithmetic.
//! Every number a criterion depends on must either appear literally or be
//! declared as a named `threshold.<name>` constant in the locked statement,
//! so the whole decision surface is visible in the diffable text.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CriteriaError {
    #[error("parse error at offset {position}: {msg}")]
    Parse { position: usize, msg: String },
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
}

impl CmpOp {
    fn as_str(&self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
        }
    }

    fn apply(&self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq => a == b,
        }
    }
}

/// A metric-valued operand: a named metric or the absolute difference of two.
#[derive(Debug, Clone, PartialEq)]
pub enum MetricExpr {
    Name(String),
    AbsDiff(String, String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Metric(MetricExpr),
    Number(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Cmp { lhs: Operand, op: CmpOp, rhs: Operand },
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
}

// --- tokenizer -------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Number(f64),
    Op(CmpOp),
    LParen,
    RParen,
    Minus,
    And,
    Or,
    Not,
    Abs,
}

fn tokenize(input: &str) -> Result<Vec<(usize, Token)>, CriteriaError> {
    let bytes = input.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        match c {
            '(' => {
                tokens.push((start, Token::LParen));
                i += 1;
            }
            ')' => {
                tokens.push((start, Token::RParen));
                i += 1;
            }
            '-' => {
                tokens.push((start, Token::Minus));
                i += 1;
            }
            '<' | '>' => {
                let eq = i + 1 < bytes.len() && bytes[i + 1] == b'=';
                let op = match (c, eq) {
                    ('<', false) => CmpOp::Lt,
                    ('<', true) => CmpOp::Le,
                    ('>', false) => CmpOp::Gt,
                    _ => CmpOp::Ge,
                };
                tokens.push((start, Token::Op(op)));
                i += if eq { 2 } else { 1 };
            }
            '=' => {
                if i + 1 < bytes.len() && bytes[i + 1] == b'=' {
                    tokens.push((start, Token::Op(CmpOp::Eq)));
                    i += 2;
                } else {
                    return Err(CriteriaError::Parse {
                        position: start,
                        msg: "single `=` is not an operator; use `==`".into(),
                    });
                }
            }
            _ if c.is_ascii_digit() => {
                let mut j = i;
                while j < bytes.len()
                    && (bytes[j].is_ascii_digit()
                        || bytes[j] == b'.'
                        || bytes[j] == b'e'
                        || bytes[j] == b'E'
                        || (j > i
                            && (bytes[j] == b'-' || bytes[j] == b'+')
                            && (bytes[j - 1] == b'e' || bytes[j - 1] == b'E')))
                {
                    j += 1;
                }
                let text = &input[i..j];
                let value: f64 = text.parse().map_err(|_| CriteriaError::Parse {
                    position: start,
                    msg: format!("invalid number `{text}`"),
                })?;
                tokens.push((start, Token::Number(value)));
                i = j;
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let mut j = i;
                while j < bytes.len()
                    && ((bytes[j] as char).is_ascii_alphanumeric()
                        || bytes[j] == b'_'
                        || bytes[j] == b'.')
                {
                    j += 1;
                }
                let word = &input[i..j];
                let token = match word {
                    "and" => Token::And,
                    "or" => Token::Or,
                    "not" => Token::Not,
                    "abs" => Token::Abs,
                    _ => Token::Ident(word.to_string()),
                };
                tokens.push((start, token));
                i = j;
            }
            _ => {
                return Err(CriteriaError::Parse {
                    position: start,
                    msg: format!("unexpected character `{c}`"),
                })
            }
        }
    }
    Ok(tokens)
}

// --- parser ----------------------------------------------------------------

struct Parser {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    input_len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn position(&self) -> usize {
        self.tokens.get(self.pos).map(|(p, _)| *p).unwrap_or(self.input_len)
    }

    fn advance(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: &Token, what: &str) -> Result<(), CriteriaError> {
        if self.peek() == Some(want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(CriteriaError::Parse { position: self.position(), msg: format!("expected {what}") })
        }
    }

    fn parse_expr(&mut self) -> Result<Expr, CriteriaError> {
        let mut left = self.parse_and()?;
        while self.peek() == Some(&Token::Or) {
            self.pos += 1;
            let right = self.parse_and()?;
            left = Expr::Or(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn parse_and(&mut self) -> Result<Expr, CriteriaError> {
        let mut left = self.parse_unary()?;
        while self.peek() == Some(&Token::And) {
            self.pos += 1;
            let right = self.parse_unary()?;
            left = Expr::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn parse_unary(&mut self) -> Result<Expr, CriteriaError> {
        match self.peek() {
            Some(Token::Not) => {
                self.pos += 1;
                Ok(Expr::Not(Box::new(self.parse_unary()?)))
            }
            Some(Token::LParen) => {
                self.pos += 1;
                let inner = self.parse_expr()?;
                self.expect(&Token::RParen, "`)`")?;
                Ok(inner)
            }
            _ => self.parse_cmp(),
        }
    }

    fn parse_cmp(&mut self) -> Result<Expr, CriteriaError> {
        let lhs = self.parse_operand()?;
        let pos = self.position();
        let op = match self.advance() {
            Some(Token::Op(op)) => op,
            _ => {
                return Err(CriteriaError::Parse {
                    position: pos,
                    msg: "expected comparison operator (<, <=, >, >=, ==)".into(),
                })
            }
        };
        let rhs = self.parse_operand()?;
        Ok(Expr::Cmp { lhs, op, rhs })
    }

    fn parse_operand(&mut self) -> Result<Operand, CriteriaError> {
        let pos = self.position();
        match self.advance() {
            Some(Token::Number(v)) => Ok(Operand::Number(v)),
            Some(Token::Ident(name)) => Ok(Operand::Metric(MetricExpr::Name(name))),
            Some(Token::Abs) => {
                self.expect(&Token::LParen, "`(` after abs")?;
                let a_pos = self.position();
                let a = match self.advance() {
                    Some(Token::Ident(n)) => n,
                    _ => {
                        return Err(CriteriaError::Parse {
                            position: a_pos,
                            msg: "abs() takes `metric - metric`".into(),
                        })
                    }
                };
                self.expect(&Token::Minus, "`-` inside abs()")?;
                let b_pos = self.position();
                let b = match self.advance() {
                    Some(Token::Ident(n)) => n,
                    _ => {
                        return Err(CriteriaError::Parse {
                            position: b_pos,
                            msg: "abs() takes `metric - metric`".into(),
                        })
                    }
                };
                self.expect(&Token::RParen, "`)` closing abs")?;
                Ok(Operand::Metric(MetricExpr::AbsDiff(a, b)))
            }
            other => Err(CriteriaError::Parse {
                position: pos,
                msg: format!("expected metric, number, or abs(...), got {other:?}"),
            }),
        }
    }
}

/// Parses a criterion expression into its AST.
pub fn parse(input: &str) -> Result<Expr, CriteriaError> {
    let tokens = tokenize(input)?;
    if tokens.is_empty() {
        return Err(CriteriaError::Parse { position: 0, msg: "empty expression".into() });
    }
    let mut parser = Parser { tokens, pos: 0, input_len: input.len() };
    let expr = parser.parse_expr()?;
    if parser.pos != parser.tokens.len() {
        return Err(CriteriaError::Parse {
            position: parser.position(),
            msg: "trailing input after expression".into(),
        });
    }
    Ok(expr)
}

/// The published metric namespace: the first dotted segment of every metric
/// name must be one of these.
pub const METRIC_NAMESPACE: &[&str] = &[
    "pretrend", "leads", "effect", "se", "p", "ci", "smd", "overlap", "break", "boundary",
    "att", "its", "threshold", "audit", "multiplicity",
];

pub fn metric_in_namespace(name: &str) -> bool {
    let head = name.split('.').next().unwrap_or("");
    METRIC_NAMESPACE.contains(&head)
}

/// Every metric name referenced by the expression, in first-use order.
pub fn referenced_metrics(expr: &Expr) -> Vec<String> {
    fn operand(o: &Operand, out: &mut Vec<String>) {
        if let Operand::Metric(m) = o {
            match m {
                MetricExpr::Name(n) => out.push(n.clone()),
                MetricExpr::AbsDiff(a, b) => {
                    out.push(a.clone());
                    out.push(b.clone());
                }
            }
        }
    }
    fn walk(e: &Expr, out: &mut Vec<String>) {
        match e {
            Expr::Cmp { lhs, rhs, .. } => {
                operand(lhs, out);
                operand(rhs, out);
            }
            Expr::Not(inner) => walk(inner, out),
            Expr::And(a, b) | Expr::Or(a, b) => {
                walk(a, out);
                walk(b, out);
            }
        }
    }
    let mut out = Vec::new();
    walk(expr, &mut out);
    let mut seen = std::collections::BTreeSet::new();
    out.retain(|n| seen.insert(n.clone()));
    out
}

/// Rejects metric names outside the published namespace.
pub fn validate_namespace(expr: &Expr) -> Result<(), CriteriaError> {
    for name in referenced_metrics(expr) {
        if !metric_in_namespace(&name) {
            return Err(CriteriaError::UnknownMetric(name));
        }
    }
    Ok(())
}

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Or(..) => 1,
        Expr::And(..) => 2,
        Expr::Not(_) => 3,
        Expr::Cmp { .. } => 4,
    }
}

fn print_operand(o: &Operand, out: &mut String) {
    match o {
        Operand::Number(v) => out.push_str(&crate::kv::fmt_f64(*v)),
        Operand::Metric(MetricExpr::Name(n)) => out.push_str(n),
        Operand::Metric(MetricExpr::AbsDiff(a, b)) => {
            let _ = write!(out, "abs({a} - {b})");
        }
    }
}

fn print_expr(e: &Expr, min: u8, out: &mut String) {
    let wrap = precedence(e) < min;
    if wrap {
        out.push('(');
    }
    match e {
        Expr::Cmp { lhs, op, rhs } => {
            print_operand(lhs, out);
            let _ = write!(out, " {} ", op.as_str());
            print_operand(rhs, out);
        }
        Expr::Not(inner) => {
            out.push_str("not ");
            print_expr(inner, 3, out);
        }
        Expr::And(a, b) => {
            print_expr(a, 2, out);
            out.push_str(" and ");
            print_expr(b, 2, out);
        }
        Expr::Or(a, b) => {
            print_expr(a, 1, out);
            out.push_str(" or ");
            print_expr(b, 1, out);
        }
    }
    if wrap {
        out.push(')');
    }
}

/// Canonical printed form; `parse(print(e))` yields an equal AST.
pub fn print(expr: &Expr) -> String {
    let mut out = String::new();
    print_expr(expr, 0, &mut out);
    out
}

/// Result of evaluating one criterion against supplied metric values.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub triggered: bool,
    /// Metric values actually consulted, in reference order.
    pub inputs: Vec<(String, f64)>,
    /// Metrics referenced but not supplied. Any entry here forces
    /// `triggered = true` (a criterion that cannot be evaluated is treated as
    /// met, never silently skipped).
    pub missing: Vec<String>,
}

/// Evaluates the expression against the supplied metric values,
/// conservatively triggering when any referenced metric is missing.
pub fn evaluate(expr: &Expr, metrics: &BTreeMap<String, f64>) -> Evaluation {
    let referenced = referenced_metrics(expr);
    let mut inputs = Vec::new();
    let mut missing = Vec::new();
    for name in &referenced {
        match metrics.get(name) {
            Some(v) => inputs.push((name.clone(), *v)),
            None => missing.push(name.clone()),
        }
    }
    if !missing.is_empty() {
        return Evaluation { triggered: true, inputs, missing };
    }

    fn operand_value(o: &Operand, metrics: &BTreeMap<String, f64>) -> f64 {
        match o {
            Operand::Number(v) => *v,
            Operand::Metric(MetricExpr::Name(n)) => metrics[n],
            Operand::Metric(MetricExpr::AbsDiff(a, b)) => (metrics[a] - metrics[b]).abs(),
        }
    }
    fn walk(e: &Expr, metrics: &BTreeMap<String, f64>) -> bool {
        match e {
            Expr::Cmp { lhs, op, rhs } => {
                op.apply(operand_value(lhs, metrics), operand_value(rhs, metrics))
            }
            Expr::Not(inner) => !walk(inner, metrics),
            Expr::And(a, b) => walk(a, metrics) && walk(b, metrics),
            Expr::Or(a, b) => walk(a, metrics) || walk(b, metrics),
        }
    }
    Evaluation { triggered: walk(expr, metrics), inputs, missing }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn minimal_comparison() {
        let e = parse("pretrend.p < 0.10").unwrap();
        assert_eq!(
            e,
            Expr::Cmp {
                lhs: Operand::Metric(MetricExpr::Name("pretrend.p".into())),
                op: CmpOp::Lt,
                rhs: Operand::Number(0.10),
            }
        );
    }

    #[test]
    fn no_inline_arithmetic_on_rhs() {
        // Multiplying a metric by a constant must be rejected; thresholds are
        // named constants, not inline expressions.
        let err = parse("abs(effect.alt - effect.primary) > 0.5 * se.primary").unwrap_err();
        assert!(matches!(err, CriteriaError::Parse { .. }), "{err:?}");
        // The accepted form uses a declared named constant.
        assert!(parse("abs(effect.alt - effect.primary) > threshold.alt_gap").is_ok());
    }

    #[test]
    fn precedence_not_and_or() {
        let e = parse("not (audit.a < 1) and audit.b > 2").unwrap();
        match e {
            Expr::And(l, _) => assert!(matches!(*l, Expr::Not(_))),
            other => panic!("expected And at top, got {other:?}"),
        }
        // `or` binds loosest.
        let e = parse("audit.a < 1 or audit.b < 2 and audit.c < 3").unwrap();
        assert!(matches!(e, Expr::Or(..)));
    }

    #[test]
    fn print_parse_round_trip() {
        for text in [
            "pretrend.p < 0.10",
            "not (audit.a < 1) and audit.b > 2",
            "abs(effect.alt - effect.primary) > threshold.alt_gap",
            "audit.a == 1 or not audit.b >= 2 and audit.c <= 3",
            "(audit.a < 1 or audit.b < 2) and audit.c < 3",
        ] {
            let ast = parse(text).unwrap();
            let printed = print(&ast);
            let reparsed = parse(&printed)
                .unwrap_or_else(|e| panic!("printed `{printed}` failed: {e}"));
            assert_eq!(reparsed, ast, "round trip failed for `{text}` -> `{printed}`");
        }
    }

    #[test]
    fn evaluation_direct() {
        let e = parse("pretrend.p < 0.10").unwrap();
        assert!(evaluate(&e, &metrics(&[("pretrend.p", 0.05)])).triggered);
        assert!(!evaluate(&e, &metrics(&[("pretrend.p", 0.40)])).triggered);
    }

    #[test]
    fn missing_metric_triggers_conservatively() {
        let e = parse("pretrend.p < 0.10 and effect.primary > 0").unwrap();
        let result = evaluate(&e, &metrics(&[("pretrend.p", 0.5)]));
        assert!(result.triggered);
        assert_eq!(result.missing, vec!["effect.primary".to_string()]);
    }

    #[test]
    fn namespace_validation() {
        let e = parse("bogus.metric < 1").unwrap();
        assert_eq!(
            validate_namespace(&e),
            Err(CriteriaError::UnknownMetric("bogus.metric".into()))
        );
        assert!(validate_namespace(&parse("pretrend.p < 0.1").unwrap()).is_ok());
    }

    #[test]
    fn abs_diff_evaluates() {
        let e = parse("abs(effect.alt - effect.primary) > threshold.gap").unwrap();
        let m = metrics(&[("effect.alt", 2.0), ("effect.primary", 1.2), ("threshold.gap", 0.5)]);
        assert!(evaluate(&e, &m).triggered);
        let m = metrics(&[("effect.alt", 1.4), ("effect.primary", 1.2), ("threshold.gap", 0.5)]);
        assert!(!evaluate(&e, &m).triggered);
    }

    #[test]
    fn error_positions_reported() {
        match parse("pretrend.p <") {
            Err(CriteriaError::Parse { position, .. }) => assert!(position >= 12),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
