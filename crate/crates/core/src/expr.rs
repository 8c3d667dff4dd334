//! Coefficient expressions: a tiny arithmetic language over the domain axes.
//!
//! Grammar (standard precedence, `^` right-associative):
//!
//! ```text
//! expr   := term (("+" | "-") term)*
//! term   := factor (("*" | "/") factor)*
//! factor := base ("^" factor)?
//! base   := number | ident | ident "(" expr ")" | "(" expr ")" | "-" factor
//! ```
//!
//! The unknown field never appears here; nonlinearity in `u` lives in the
//! operator term algebra.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at position {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown function `{name}` at position {pos}")]
    UnknownFunction { name: String, pos: usize },
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("evaluation error: {0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Ln,
    Neg,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "neg" => Func::Neg,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Neg => "neg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
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

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(String),
    Pi,
    Unary(Func, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn constant(value: f64) -> Expr {
        Expr::Const(value)
    }

    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    pub fn parse(source: &str) -> Result<Expr, ExprError> {
        Parser::new(source)?.parse_all()
    }

    /// Variables referenced by the expression, in first-occurrence order.
    pub fn variables(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Var(name) => {
                if !out.contains(&name.as_str()) {
                    out.push(name);
                }
            }
            Expr::Unary(_, e) => e.collect_vars(out),
            Expr::Binary(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Expr::Const(_) | Expr::Pi => {}
        }
    }

    /// Constant value when the expression has no variables.
    pub fn as_constant(&self) -> Option<f64> {
        if self.variables().is_empty() {
            self.eval(&[]).ok()
        } else {
            None
        }
    }

    /// Evaluates with named coordinates.
    pub fn eval(&self, point: &[(&str, f64)]) -> Result<f64, ExprError> {
        self.eval_with(&|name: &str| point.iter().find(|(n, _)| *n == name).map(|(_, v)| *v))
    }

    fn eval_with(&self, lookup: &dyn Fn(&str) -> Option<f64>) -> Result<f64, ExprError> {
        let value = match self {
            Expr::Const(c) => *c,
            Expr::Pi => std::f64::consts::PI,
            Expr::Var(name) => {
                lookup(name).ok_or_else(|| ExprError::UnboundVariable(name.clone()))?
            }
            Expr::Unary(f, e) => apply_func(*f, e.eval_with(lookup)?)?,
            Expr::Binary(op, a, b) => apply_binop(*op, a.eval_with(lookup)?, b.eval_with(lookup)?)?,
        };
        Ok(value)
    }

    /// Resolves variables against an ordered axis list.
    pub fn bind(&self, axes: &[&str]) -> Result<BoundExpr, ExprError> {
        Ok(BoundExpr { node: bind_node(self, axes)? })
    }
}

fn apply_func(f: Func, x: f64) -> Result<f64, ExprError> {
    let y = match f {
        Func::Sin => x.sin(),
        Func::Cos => x.cos(),
        Func::Exp => x.exp(),
        Func::Ln => {
            if x <= 0.0 {
                return Err(ExprError::Domain(format!("ln of non-positive value {x}")));
            }
            x.ln()
        }
        Func::Neg => -x,
    };
    finite(y, || format!("{}({x}) is not finite", f.name()))
}

fn apply_binop(op: BinOp, a: f64, b: f64) -> Result<f64, ExprError> {
    let y = match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => {
            if b == 0.0 {
                return Err(ExprError::Domain(format!("division of {a} by zero")));
            }
            a / b
        }
        BinOp::Pow => a.powf(b),
    };
    finite(y, || format!("{a} {} {b} is not finite", op.symbol()))
}

fn finite(y: f64, message: impl FnOnce() -> String) -> Result<f64, ExprError> {
    if y.is_finite() {
        Ok(y)
    } else {
        Err(ExprError::Domain(message()))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Axis(usize),
    Unary(Func, Box<Node>),
    Binary(BinOp, Box<Node>, Box<Node>),
}

fn bind_node(e: &Expr, axes: &[&str]) -> Result<Node, ExprError> {
    Ok(match e {
        Expr::Const(c) => Node::Const(*c),
        Expr::Pi => Node::Const(std::f64::consts::PI),
        Expr::Var(name) => Node::Axis(
            axes.iter()
                .position(|a| a == name)
                .ok_or_else(|| ExprError::UnboundVariable(name.clone()))?,
        ),
        Expr::Unary(f, a) => Node::Unary(*f, Box::new(bind_node(a, axes)?)),
        Expr::Binary(op, a, b) => {
            Node::Binary(*op, Box::new(bind_node(a, axes)?), Box::new(bind_node(b, axes)?))
        }
    })
}

/// Expression with variables resolved to coordinate slots.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundExpr {
    node: Node,
}

impl BoundExpr {
    pub fn eval(&self, coords: &[f64]) -> Result<f64, ExprError> {
        eval_node(&self.node, coords)
    }
}

fn eval_node(node: &Node, coords: &[f64]) -> Result<f64, ExprError> {
    match node {
        Node::Const(c) => Ok(*c),
        Node::Axis(k) => Ok(coords[*k]),
        Node::Unary(f, a) => apply_func(*f, eval_node(a, coords)?),
        Node::Binary(op, a, b) => apply_binop(*op, eval_node(a, coords)?, eval_node(b, coords)?),
    }
}

/// Canonical printer: every compound subexpression is parenthesized, so the
/// output re-parses to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => {
                write!(f, "(-{:?})", -c)
            }
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Var(name) => write!(f, "{name}"),
            Expr::Pi => write!(f, "pi"),
            Expr::Unary(Func::Neg, a) => write!(f, "(-{a})"),
            Expr::Unary(func, a) => write!(f, "{}({a})", func.name()),
            Expr::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

struct Parser {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'+' | b'-' | b'*' | b'/' | b'^' => {
                out.push((Tok::Op(c as char), i));
                i += 1;
            }
            b'(' => {
                out.push((Tok::LParen, i));
                i += 1;
            }
            b')' => {
                out.push((Tok::RParen, i));
                i += 1;
            }
            b'0'..=b'9' | b'.' => {
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
                let text = &src[start..i];
                let value = text.parse::<f64>().map_err(|_| ExprError::Syntax {
                    pos: start,
                    message: format!("malformed number `{text}`"),
                })?;
                out.push((Tok::Num(value), start));
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(ExprError::Syntax { pos: i, message: format!("unexpected character `{ch}`") });
            }
        }
    }
    Ok(out)
}

impl Parser {
    fn new(src: &str) -> Result<Self, ExprError> {
        Ok(Parser { tokens: lex(src)?, pos: 0, end: src.len() })
    }

    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |(_, p)| *p)
    }

    fn error(&self, message: impl Into<String>) -> ExprError {
        ExprError::Syntax { pos: self.offset(), message: message.into() }
    }

    fn parse_all(mut self) -> Result<Expr, ExprError> {
        if self.tokens.is_empty() {
            return Err(self.error("empty expression"));
        }
        let e = self.expr()?;
        if self.peek().is_some() {
            return Err(self.error("unexpected trailing input"));
        }
        Ok(e)
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek() {
            let op = if *c == '+' { BinOp::Add } else { BinOp::Sub };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.factor()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek() {
            let op = if *c == '*' { BinOp::Mul } else { BinOp::Div };
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr, ExprError> {
        let base = self.base()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let exponent = self.factor()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn base(&mut self) -> Result<Expr, ExprError> {
        let start = self.offset();
        let Some(tok) = self.peek().cloned() else {
            return Err(self.error("unexpected end of input"));
        };
        match tok {
            Tok::Num(v) => {
                self.pos += 1;
                Ok(Expr::Const(v))
            }
            Tok::Op('-') => {
                self.pos += 1;
                Ok(Expr::Unary(Func::Neg, Box::new(self.factor()?)))
            }
            Tok::LParen => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.pos += 1;
                if let Some(Tok::LParen) = self.peek() {
                    let func = Func::from_name(&name)
                        .ok_or(ExprError::UnknownFunction { name, pos: start })?;
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    Ok(Expr::Unary(func, Box::new(arg)))
                } else if name == "pi" {
                    Ok(Expr::Pi)
                } else {
                    Ok(Expr::Var(name))
                }
            }
            Tok::Op(c) => Err(self.error(format!("unexpected operator `{c}`"))),
            Tok::RParen => Err(self.error("unexpected `)`")),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        match self.peek() {
            Some(Tok::RParen) => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.error("expected `)`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(v: f64) -> Box<Expr> {
        Box::new(Expr::Const(v))
    }
    fn v(n: &str) -> Box<Expr> {
        Box::new(Expr::Var(n.into()))
    }

    #[test]
    fn parses_kdv_forcing() {
        let e = Expr::parse("cos(t)*sin(x)").unwrap();
        assert_eq!(
            e,
            Expr::Binary(
                BinOp::Mul,
                Box::new(Expr::Unary(Func::Cos, v("t"))),
                Box::new(Expr::Unary(Func::Sin, v("x")))
            )
        );
    }

    #[test]
    fn parses_legendre_coefficient() {
        let e = Expr::parse("1 - t^2").unwrap();
        assert_eq!(
            e,
            Expr::Binary(BinOp::Sub, c(1.0), Box::new(Expr::Binary(BinOp::Pow, v("t"), c(2.0))))
        );
        assert_eq!(e.eval(&[("t", 0.0)]).unwrap(), 1.0);
    }

    #[test]
    fn parses_named_constant() {
        let e = Expr::parse("sin(pi*x)").unwrap();
        assert_eq!(
            e,
            Expr::Unary(Func::Sin, Box::new(Expr::Binary(BinOp::Mul, Box::new(Expr::Pi), v("x"))))
        );
    }

    #[test]
    fn precedence_and_associativity() {
        let e = Expr::parse("2^3^2").unwrap();
        assert_eq!(e.eval(&[]).unwrap(), 512.0);
        assert_eq!(Expr::parse("-2^2").unwrap().eval(&[]).unwrap(), -4.0);
        assert_eq!(Expr::parse("8/4/2").unwrap().eval(&[]).unwrap(), 1.0);
        assert_eq!(Expr::parse("1-2-3").unwrap().eval(&[]).unwrap(), -4.0);
        assert_eq!(Expr::parse("2*-3").unwrap().eval(&[]).unwrap(), -6.0);
        assert_eq!(Expr::parse("1.5e2 + 1e-1").unwrap().eval(&[]).unwrap(), 150.1);
    }

    #[test]
    fn evaluates_at_named_point() {
        let e = Expr::parse("cos(t)*sin(x)").unwrap();
        assert_eq!(e.eval(&[("x", 0.0), ("t", 0.3)]).unwrap(), 0.0);
    }

    #[test]
    fn syntax_errors_carry_position() {
        assert_eq!(
            Expr::parse("1 + * 2"),
            Err(ExprError::Syntax { pos: 4, message: "unexpected operator `*`".into() })
        );
        assert!(matches!(Expr::parse("(1 + 2"), Err(ExprError::Syntax { pos: 6, .. })));
        assert!(matches!(Expr::parse(""), Err(ExprError::Syntax { .. })));
        assert!(matches!(Expr::parse("1 $ 2"), Err(ExprError::Syntax { pos: 2, .. })));
        assert_eq!(
            Expr::parse("2*tanh(x)"),
            Err(ExprError::UnknownFunction { name: "tanh".into(), pos: 2 })
        );
    }

    #[test]
    fn evaluation_errors() {
        let e = Expr::parse("ln(x)").unwrap();
        assert!(matches!(e.eval(&[("x", 0.0)]), Err(ExprError::Domain(_))));
        assert!(matches!(e.eval(&[]), Err(ExprError::UnboundVariable(_))));
        let d = Expr::parse("1/x").unwrap();
        assert!(matches!(d.eval(&[("x", 0.0)]), Err(ExprError::Domain(_))));
    }

    #[test]
    fn bind_rejects_foreign_variables() {
        let e = Expr::parse("6*u^2").unwrap();
        assert_eq!(e.bind(&["t"]), Err(ExprError::UnboundVariable("u".into())));
        let ok = Expr::parse("x + 2*t").unwrap().bind(&["x", "t"]).unwrap();
        assert_eq!(ok.eval(&[1.0, 3.0]).unwrap(), 7.0);
    }

    fn arb_expr() -> impl Strategy<Value = String> {
        let leaf = prop_oneof![
            (0u32..1000).prop_map(|n| format!("{}", n as f64 / 8.0)),
            Just("x".to_string()),
            Just("t".to_string()),
            Just("pi".to_string()),
        ];
        leaf.prop_recursive(4, 32, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone(), prop_oneof![Just("+"), Just("-"), Just("*"), Just("/"), Just("^")])
                    .prop_map(|(a, b, op)| format!("{a} {op} {b}")),
                (inner.clone(), prop_oneof![Just("sin"), Just("cos"), Just("exp"), Just("ln")])
                    .prop_map(|(a, f)| format!("{f}({a})")),
                inner.clone().prop_map(|a| format!("-{a}")),
                inner.prop_map(|a| format!("({a})")),
            ]
        })
    }

    proptest! {
        #[test]
        fn canonical_print_round_trips(src in arb_expr()) {
            let parsed = Expr::parse(&src).unwrap();
            let reparsed = Expr::parse(&parsed.to_string()).unwrap();
            prop_assert_eq!(reparsed, parsed);
        }

        #[test]
        fn bound_and_named_evaluation_agree(src in arb_expr(), x in -2.0f64..2.0, t in -2.0f64..2.0) {
            let e = Expr::parse(&src).unwrap();
            let named = e.eval(&[("x", x), ("t", t)]);
            let bound = e.bind(&["x", "t"]).unwrap().eval(&[x, t]);
            prop_assert_eq!(named, bound);
        }
    }
}
