//! Scalar and matrix-valued coefficient expressions.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?          // right associative
//! atom    := number | 'pi' | ident | ident '(' sum ')' | '(' sum ')'
//! ```
//!
//! Identifiers `x1, x2, ...` are spatial coordinates; any other identifier
//! that is not a function name is a named parameter resolved at evaluation.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::DenseMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown function '{name}' at byte {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("unbound variable '{0}'")]
    Unbound(String),
    #[error("expression evaluated to a non-finite value ({value}) at x = {x:?}")]
    NonFinite { value: f64, x: Vec<f64> },
    #[error("entry ({row}, {col}): {source}")]
    Entry {
        row: usize,
        col: usize,
        #[source]
        source: Box<ExprError>,
    },
    #[error("matrix expression must be square with {expected} entries, got {got}")]
    Shape { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Sqrt,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Tan => v.tan(),
            Func::Exp => v.exp(),
            Func::Sqrt => v.sqrt(),
            Func::Abs => v.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

/// Expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Pi,
    /// Zero-based coordinate index (`x1` is `Coord(0)`).
    Coord(usize),
    Param(String),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Named scalar parameters, e.g. the sweep parameter `b`.
pub type Params = BTreeMap<String, f64>;

/// Evaluation point and parameter bindings.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub x: &'a [f64],
    pub params: &'a Params,
}

impl<'a> EvalContext<'a> {
    pub fn new(x: &'a [f64], params: &'a Params) -> Self {
        Self { x, params }
    }
}

impl Expr {
    /// Evaluates the tree; non-finite results are reported with the offending point.
    pub fn eval(&self, ctx: &EvalContext<'_>) -> Result<f64, ExprError> {
        let v = self.eval_raw(ctx)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ExprError::NonFinite {
                value: v,
                x: ctx.x.to_vec(),
            })
        }
    }

    fn eval_raw(&self, ctx: &EvalContext<'_>) -> Result<f64, ExprError> {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Pi => std::f64::consts::PI,
            Expr::Coord(i) => *ctx
                .x
                .get(*i)
                .ok_or_else(|| ExprError::Unbound(format!("x{}", i + 1)))?,
            Expr::Param(name) => *ctx
                .params
                .get(name)
                .ok_or_else(|| ExprError::Unbound(name.clone()))?,
            Expr::Neg(e) => -e.eval_raw(ctx)?,
            Expr::Binary(op, l, r) => {
                let (a, b) = (l.eval_raw(ctx)?, r.eval_raw(ctx)?);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.powf(b),
                }
            }
            Expr::Call(f, e) => f.apply(e.eval_raw(ctx)?),
        })
    }

    /// Names of the parameters referenced by the tree.
    pub fn params(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_params(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_params(&self, out: &mut Vec<String>) {
        match self {
            Expr::Param(p) => out.push(p.clone()),
            Expr::Neg(e) | Expr::Call(_, e) => e.collect_params(out),
            Expr::Binary(_, l, r) => {
                l.collect_params(out);
                r.collect_params(out);
            }
            _ => {}
        }
    }

    /// Largest coordinate index referenced plus one.
    pub fn coord_count(&self) -> usize {
        match self {
            Expr::Coord(i) => i + 1,
            Expr::Neg(e) | Expr::Call(_, e) => e.coord_count(),
            Expr::Binary(_, l, r) => l.coord_count().max(r.coord_count()),
            _ => 0,
        }
    }
}

/// Fully parenthesized rendering that reparses to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Pi => write!(f, "pi"),
            Expr::Coord(i) => write!(f, "x{}", i + 1),
            Expr::Param(p) => write!(f, "{p}"),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Binary(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
            Expr::Call(func, e) => write!(f, "{}({e})", func.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn tokenize(text: &str) -> Result<Vec<(Token, usize)>, ExprError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let lit = &text[start..i];
            let v: f64 = lit.parse().map_err(|_| ExprError::Syntax {
                offset: start,
                message: format!("malformed number '{lit}'"),
            })?;
            if !v.is_finite() {
                return Err(ExprError::Syntax {
                    offset: start,
                    message: format!("number '{lit}' is out of range"),
                });
            }
            out.push((Token::Num(v), start));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Token::Ident(text[start..i].to_string()), start));
        } else {
            let tok = match c {
                '+' | '-' | '*' | '/' | '^' => Token::Op(c),
                '(' => Token::LParen,
                ')' => Token::RParen,
                _ => {
                    return Err(ExprError::Syntax {
                        offset: i,
                        message: format!("unexpected character '{c}'"),
                    })
                }
            };
            out.push((tok, i));
            i += c.len_utf8();
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |(_, o)| *o)
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Syntax {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn sum(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.product()?;
        while let Some(Token::Op(c @ ('+' | '-'))) = self.peek() {
            let op = if *c == '+' { BinOp::Add } else { BinOp::Sub };
            self.pos += 1;
            let rhs = self.product()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(Token::Op(c @ ('*' | '/'))) = self.peek() {
            let op = if *c == '*' { BinOp::Mul } else { BinOp::Div };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if let Some(Token::Op('-')) = self.peek() {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if let Some(Token::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let offset = self.offset();
        match self.peek().cloned() {
            Some(Token::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Token::LParen) => {
                self.pos += 1;
                let inner = self.sum()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Some(Token::Ident(name)) => {
                self.pos += 1;
                if let Some(Token::LParen) = self.peek() {
                    let func = Func::from_name(&name).ok_or(ExprError::UnknownFunction {
                        name: name.clone(),
                        offset,
                    })?;
                    self.pos += 1;
                    let arg = self.sum()?;
                    self.expect_rparen()?;
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                if name == "pi" {
                    return Ok(Expr::Pi);
                }
                if Func::from_name(&name).is_some() {
                    return Err(ExprError::Syntax {
                        offset,
                        message: format!("function '{name}' requires an argument"),
                    });
                }
                Ok(coordinate_index(&name).map_or(Expr::Param(name), Expr::Coord))
            }
            Some(tok) => self.error(format!("unexpected token {tok:?}")),
            None => self.error("unexpected end of input"),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        match self.peek() {
            Some(Token::RParen) => {
                self.pos += 1;
                Ok(())
            }
            _ => self.error("expected ')'"),
        }
    }
}

fn coordinate_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('x')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0') {
        return None;
    }
    digits.parse::<usize>().ok().map(|k| k - 1)
}

/// Parses an expression string.
pub fn parse_expr(text: &str) -> Result<Expr, ExprError> {
    let tokens = tokenize(text)?;
    if tokens.is_empty() {
        return Err(ExprError::Syntax {
            offset: 0,
            message: "empty expression".into(),
        });
    }
    let mut p = Parser {
        tokens,
        pos: 0,
        end: text.len(),
    };
    let e = p.sum()?;
    if p.pos != p.tokens.len() {
        return p.error("trailing input");
    }
    Ok(e)
}

/// Square matrix of expressions, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixExpr {
    n: usize,
    entries: Vec<Expr>,
    sources: Vec<String>,
}

impl MatrixExpr {
    /// Parses an `n × n` grid of expression strings.
    pub fn parse(rows: &[Vec<String>]) -> Result<Self, ExprError> {
        let n = rows.len();
        let got: usize = rows.iter().map(Vec::len).sum();
        if rows.iter().any(|r| r.len() != n) || n == 0 {
            return Err(ExprError::Shape {
                expected: n * n,
                got,
            });
        }
        let mut entries = Vec::with_capacity(n * n);
        let mut sources = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            for (j, text) in row.iter().enumerate() {
                let e = parse_expr(text).map_err(|source| ExprError::Entry {
                    row: i,
                    col: j,
                    source: Box::new(source),
                })?;
                entries.push(e);
                sources.push(text.clone());
            }
        }
        Ok(Self {
            n,
            entries,
            sources,
        })
    }

    /// Constant matrix expression.
    pub fn constant(m: &DenseMatrix) -> Self {
        assert!(m.is_square());
        let n = m.rows();
        Self {
            n,
            entries: m.as_slice().iter().map(|v| Expr::Num(*v)).collect(),
            sources: m.as_slice().iter().map(|v| format!("{v:?}")).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn entry(&self, i: usize, j: usize) -> &Expr {
        &self.entries[i * self.n + j]
    }

    /// Original entry strings, row-major.
    pub fn source_rows(&self) -> Vec<Vec<String>> {
        self.sources
            .chunks(self.n)
            .map(<[String]>::to_vec)
            .collect()
    }

    pub fn coord_count(&self) -> usize {
        self.entries
            .iter()
            .map(Expr::coord_count)
            .max()
            .unwrap_or(0)
    }

    pub fn params(&self) -> Vec<String> {
        let mut out: Vec<String> = self.entries.iter().flat_map(Expr::params).collect();
        out.sort();
        out.dedup();
        out
    }

    /// Entrywise evaluation; errors carry the `(row, col)` of the failing entry.
    pub fn eval(&self, ctx: &EvalContext<'_>) -> Result<DenseMatrix, ExprError> {
        let mut m = DenseMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                m[(i, j)] = self
                    .entry(i, j)
                    .eval(ctx)
                    .map_err(|source| ExprError::Entry {
                        row: i,
                        col: j,
                        source: Box::new(source),
                    })?;
            }
        }
        Ok(m)
    }
}

/// Entrywise evaluation of a matrix expression.
pub fn eval_matrix(b: &MatrixExpr, ctx: &EvalContext<'_>) -> Result<DenseMatrix, ExprError> {
    b.eval(ctx)
}

/// Serializable form of a matrix expression: the entry strings.
impl Serialize for MatrixExpr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.source_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for MatrixExpr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<String>>::deserialize(d)?;
        MatrixExpr::parse(&rows).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn eval_at(text: &str, x: &[f64], params: &[(&str, f64)]) -> Result<f64, ExprError> {
        let p: Params = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        parse_expr(text)?.eval(&EvalContext::new(x, &p))
    }

    fn paper_b() -> MatrixExpr {
        MatrixExpr::parse(&[
            vec!["2*sin(2*pi*x1) + b".into(), "2*tan(x1)".into()],
            vec!["2*cos(pi*x1)".into(), "2*(2*x1) + b".into()],
        ])
        .unwrap()
    }

    #[test]
    fn precedence_and_functions() {
        assert_eq!(eval_at("1+2*3", &[], &[]).unwrap(), 7.0);
        assert!((eval_at("2*sin(2*pi*x1)", &[0.25], &[]).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(eval_at("tan(x1)", &[0.0], &[]).unwrap(), 0.0);
        assert_eq!(eval_at("3.5", &[], &[]).unwrap(), 3.5);
        assert_eq!(eval_at("x1^2", &[3.0], &[]).unwrap(), 9.0);
        assert!(eval_at("2*cos(pi*x1)", &[0.5], &[]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn associativity() {
        assert_eq!(eval_at("8-3-2", &[], &[]).unwrap(), 3.0);
        assert_eq!(eval_at("8/4/2", &[], &[]).unwrap(), 1.0);
        assert_eq!(eval_at("2^3^2", &[], &[]).unwrap(), 512.0);
        assert_eq!(eval_at("-2^2", &[], &[]).unwrap(), -4.0);
        assert_eq!(eval_at("2^-1", &[], &[]).unwrap(), 0.5);
        assert_eq!(eval_at("1e-3*1E3", &[], &[]).unwrap(), 1.0);
    }

    #[test]
    fn errors_are_structured() {
        assert!(matches!(
            parse_expr("1 + * 2"),
            Err(ExprError::Syntax { offset: 4, .. })
        ));
        assert!(matches!(
            parse_expr("foo(1)"),
            Err(ExprError::UnknownFunction { .. })
        ));
        assert!(matches!(
            parse_expr("(1 + 2"),
            Err(ExprError::Syntax { offset: 6, .. })
        ));
        assert!(matches!(parse_expr(""), Err(ExprError::Syntax { .. })));
        assert_eq!(
            eval_at("b + 1", &[], &[]),
            Err(ExprError::Unbound("b".into()))
        );
        assert_eq!(
            eval_at("x2", &[1.0], &[]),
            Err(ExprError::Unbound("x2".into()))
        );
        let half_pi = std::f64::consts::FRAC_PI_2;
        // tan(π/2) in floating point is huge but finite; 1/0 is not
        assert!(matches!(
            eval_at("1/(x1-x1)", &[half_pi], &[]),
            Err(ExprError::NonFinite { .. })
        ));
    }

    #[test]
    fn matrix_eval_paper_coefficients() {
        let b = paper_b();
        let p: Params = [("b".to_string(), 1.0)].into();
        let m = b.eval(&EvalContext::new(&[0.0], &p)).unwrap();
        assert_eq!(m.to_rows(), vec![vec![1.0, 0.0], vec![2.0, 1.0]]);

        let p: Params = [("b".to_string(), 0.0)].into();
        let m = b.eval(&EvalContext::new(&[0.5], &p)).unwrap();
        assert!(m[(0, 0)].abs() < 1e-15);
        assert!((m[(0, 1)] - 2.0 * 0.5f64.tan()).abs() < 1e-15);
        assert!(m[(1, 0)].abs() < 1e-15);
        assert_eq!(m[(1, 1)], 2.0);
    }

    #[test]
    fn matrix_errors_carry_position() {
        let b = MatrixExpr::parse(&[
            vec!["0".into(), "0".into()],
            vec!["1/x1".into(), "0".into()],
        ])
        .unwrap();
        let err = b
            .eval(&EvalContext::new(&[0.0], &Params::new()))
            .unwrap_err();
        assert!(matches!(err, ExprError::Entry { row: 1, col: 0, .. }));
        let zero = MatrixExpr::constant(&DenseMatrix::zeros(3, 3));
        let m = zero
            .eval(&EvalContext::new(&[0.3], &Params::new()))
            .unwrap();
        assert_eq!(m, DenseMatrix::zeros(3, 3));
        assert!(MatrixExpr::parse(&[vec!["1".into(), "2".into()]]).is_err());
    }

    #[test]
    fn coordinate_names() {
        assert_eq!(parse_expr("x1").unwrap(), Expr::Coord(0));
        assert_eq!(parse_expr("x3").unwrap(), Expr::Coord(2));
        assert_eq!(parse_expr("x0").unwrap(), Expr::Param("x0".into()));
        assert_eq!(parse_expr("xb").unwrap(), Expr::Param("xb".into()));
        assert_eq!(paper_b().params(), vec!["b".to_string()]);
        assert_eq!(paper_b().coord_count(), 1);
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0.0f64..1e3).prop_map(Expr::Num),
            Just(Expr::Pi),
            (0usize..3).prop_map(Expr::Coord),
            prop_oneof![Just("b"), Just("alpha")].prop_map(|s| Expr::Param(s.to_string())),
        ];
        leaf.prop_recursive(5, 48, 2, |inner| {
            let ops = prop_oneof![
                Just(BinOp::Add),
                Just(BinOp::Sub),
                Just(BinOp::Mul),
                Just(BinOp::Div),
                Just(BinOp::Pow)
            ];
            let funcs = prop_oneof![
                Just(Func::Sin),
                Just(Func::Cos),
                Just(Func::Tan),
                Just(Func::Exp),
                Just(Func::Sqrt),
                Just(Func::Abs)
            ];
            prop_oneof![
                inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                (ops, inner.clone(), inner.clone()).prop_map(|(o, l, r)| Expr::Binary(
                    o,
                    Box::new(l),
                    Box::new(r)
                )),
                (funcs, inner).prop_map(|(f, e)| Expr::Call(f, Box::new(e))),
            ]
        })
    }

    proptest! {
        #[test]
        fn display_reparses_identically(e in arb_expr()) {
            let text = e.to_string();
            prop_assert_eq!(parse_expr(&text).unwrap(), e);
        }

        #[test]
        fn random_token_soup_never_panics(tokens in prop::collection::vec(
            prop_oneof![
                Just("1"), Just("2.5"), Just("x1"), Just("b"), Just("pi"), Just("+"), Just("-"),
                Just("*"), Just("/"), Just("^"), Just("("), Just(")"), Just("sin"), Just("tan"),
                Just("sqrt"), Just("1e3"), Just(" "),
            ], 0..24)) {
            let text: String = tokens.concat();
            if let Ok(e) = parse_expr(&text) {
                let p: Params = [("b".to_string(), 0.7)].into();
                let _ = e.eval(&EvalContext::new(&[0.3], &p));
            }
        }

        #[test]
        fn eval_is_deterministic(e in arb_expr(), x in prop::collection::vec(-2.0f64..2.0, 3)) {
            let p: Params = [("b".to_string(), 1.5), ("alpha".to_string(), -0.25)].into();
            let ctx = EvalContext::new(&x, &p);
            let a = format!("{:?}", e.eval(&ctx).map(f64::to_bits));
            let b = format!("{:?}", e.eval(&ctx).map(f64::to_bits));
            prop_assert_eq!(a, b);
        }
    }
}
