//! The smooth expression language for Lagrangians, coordinate maps, curves
//! and displacement fields.
//!
//! Grammar: decimal and scientific literals, identifiers, `+ - * / ^` with
//! conventional precedence (`^` right-associative and binding tightest,
//! unary minus looser than `^`, so `-2^2` is `-(2^2)`), parentheses, the
//! functions `sin cos tan exp log sqrt atan2`, and the constant `pi`.
//!
//! The language is deliberately smooth: `abs`, `floor` and comparison
//! operators are rejected at parse time. Identifiers that are not function
//! names are free variables; which names a given slot admits (`t`,
//! `q1..qn`, `qd1..qdn`, `x1..xm`, `xd1..xdm`) is enforced where
//! expressions are wired into the engine.
//!
//! Evaluation is generic over [`Scalar`], so the same tree produces plain
//! values or derivative-carrying duals. Every node result is checked for
//! finiteness; partial primitives report domain violations with the
//! offending argument instead of propagating NaN.

use std::fmt;

use crate::dualnum::{DomainError, Dual1, Dual2, Scalar};

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ParseError {
    #[error("syntax error at {line}:{col}: {message} (expected {})", expected.join(", "))]
    Syntax {
        line: usize,
        col: usize,
        message: String,
        expected: Vec<&'static str>,
    },

    #[error("unknown function `{name}` at {line}:{col}")]
    UnknownFunction {
        line: usize,
        col: usize,
        name: String,
    },

    #[error("`{construct}` at {line}:{col} is not part of the smooth expression language")]
    NonSmooth {
        line: usize,
        col: usize,
        construct: String,
    },

    #[error("function `{name}` at {line}:{col} takes {expected} argument(s), got {got}")]
    Arity {
        line: usize,
        col: usize,
        name: &'static str,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("unbound variable `{name}`")]
    Unbound { name: String },

    #[error("{0}")]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Atan2,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Atan2 => "atan2",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Atan2 => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Pi,
    Var(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// A parsed expression with its free variables in first-appearance order.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
    vars: Vec<String>,
}

/// Name-to-value map used by [`Expr::eval`].
#[derive(Debug, Clone, Default)]
pub struct VarBinding<S> {
    pairs: Vec<(String, S)>,
}

impl<S: Copy> VarBinding<S> {
    pub fn new() -> Self {
        VarBinding { pairs: Vec::new() }
    }

    pub fn set(&mut self, name: &str, value: S) -> &mut Self {
        if let Some(p) = self.pairs.iter_mut().find(|(n, _)| n == name) {
            p.1 = value;
        } else {
            self.pairs.push((name.to_string(), value));
        }
        self
    }

    pub fn get(&self, name: &str) -> Option<S> {
        self.pairs.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

pub fn parse(src: &str) -> Result<Expr, ParseError> {
    Expr::parse(src)
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ParseError> {
        let tokens = lex(src)?;
        let mut p = Parser { tokens, pos: 0, vars: Vec::new() };
        let root = p.expression()?;
        p.expect_end()?;
        Ok(Expr { root, vars: p.vars })
    }

    /// Free variables in order of first appearance.
    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    /// Evaluates with values supplied positionally, `values[i]` bound to
    /// `self.vars()[i]`.
    pub fn eval_slice<S: Scalar>(&self, values: &[S]) -> Result<S, EvalError> {
        assert_eq!(
            values.len(),
            self.vars.len(),
            "positional evaluation needs one value per free variable"
        );
        eval_node(&self.root, values)
    }

    /// Evaluates with a name-to-value binding; unbound free variables are
    /// reported by name.
    pub fn eval<S: Scalar>(&self, binding: &VarBinding<S>) -> Result<S, EvalError> {
        let mut values = Vec::with_capacity(self.vars.len());
        for name in &self.vars {
            match binding.get(name) {
                Some(v) => values.push(v),
                None => return Err(EvalError::Unbound { name: name.clone() }),
            }
        }
        eval_node(&self.root, &values)
    }

    /// Canonical text form; re-parsing it reproduces the same tree.
    pub fn unparse(&self) -> String {
        let mut out = String::new();
        unparse_node(&self.root, &self.vars, 0, &mut out);
        out
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.unparse())
    }
}

// ---------------------------------------------------------------- lexing --

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number `{v}`"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(src: &str) -> Result<Vec<Spanned>, ParseError> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    let mut line = 1;
    let mut col = 1;
    while i < chars.len() {
        let c = chars[i];
        let (tline, tcol) = (line, col);
        let advance = |i: &mut usize, line: &mut usize, col: &mut usize| {
            if chars[*i] == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            *i += 1;
        };
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col);
            continue;
        }
        let simple = match c {
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '^' => Some(Tok::Caret),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            _ => None,
        };
        if let Some(tok) = simple {
            out.push(Spanned { tok, line: tline, col: tcol });
            advance(&mut i, &mut line, &mut col);
            continue;
        }
        if matches!(c, '<' | '>' | '=' | '!') {
            return Err(ParseError::NonSmooth {
                line: tline,
                col: tcol,
                construct: format!("comparison operator `{c}`"),
            });
        }
        if c.is_ascii_digit() || (c == '.' && i + 1 < chars.len() && chars[i + 1].is_ascii_digit())
        {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                advance(&mut i, &mut line, &mut col);
            }
            if i < chars.len() && chars[i] == '.' {
                advance(&mut i, &mut line, &mut col);
                while i < chars.len() && chars[i].is_ascii_digit() {
                    advance(&mut i, &mut line, &mut col);
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    while i < j {
                        advance(&mut i, &mut line, &mut col);
                    }
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        advance(&mut i, &mut line, &mut col);
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let value: f64 = text.parse().map_err(|_| ParseError::Syntax {
                line: tline,
                col: tcol,
                message: format!("malformed number literal `{text}`"),
                expected: vec!["number"],
            })?;
            if !value.is_finite() {
                return Err(ParseError::Syntax {
                    line: tline,
                    col: tcol,
                    message: format!("number literal `{text}` overflows"),
                    expected: vec!["finite number"],
                });
            }
            out.push(Spanned { tok: Tok::Num(value), line: tline, col: tcol });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                advance(&mut i, &mut line, &mut col);
            }
            let text: String = chars[start..i].iter().collect();
            out.push(Spanned { tok: Tok::Ident(text), line: tline, col: tcol });
            continue;
        }
        return Err(ParseError::Syntax {
            line: tline,
            col: tcol,
            message: format!("unexpected character `{c}`"),
            expected: vec!["number", "identifier", "operator", "`(`"],
        });
    }
    out.push(Spanned { tok: Tok::End, line, col });
    Ok(out)
}

// --------------------------------------------------------------- parsing --

/// Function-like names rejected because they would break smoothness.
const NON_SMOOTH_NAMES: &[&str] = &["abs", "floor", "ceil", "sign", "signum", "min", "max"];

struct Parser {
    tokens: Vec<Spanned>,
    pos: usize,
    vars: Vec<String>,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> Spanned {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn syntax(&self, message: impl Into<String>, expected: Vec<&'static str>) -> ParseError {
        let at = self.peek();
        ParseError::Syntax {
            line: at.line,
            col: at.col,
            message: message.into(),
            expected,
        }
    }

    fn expect_end(&self) -> Result<(), ParseError> {
        match &self.peek().tok {
            Tok::End => Ok(()),
            t => Err(self.syntax(
                format!("trailing {}", t.describe()),
                vec!["operator", "end of input"],
            )),
        }
    }

    fn expression(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().tok {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().tok {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if matches!(self.peek().tok, Tok::Minus) {
            self.bump();
            // Unary minus binds looser than `^`: -2^2 negates the power.
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if matches!(self.peek().tok, Tok::Caret) {
            self.bump();
            // Right-associative; the exponent may itself be negated.
            let exponent = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        match self.peek().tok.clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Node::Num(v))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expression()?;
                if !matches!(self.peek().tok, Tok::RParen) {
                    return Err(self.syntax("unclosed parenthesis", vec!["`)`"]));
                }
                self.bump();
                Ok(inner)
            }
            Tok::Ident(name) => {
                let at = self.bump();
                if matches!(self.peek().tok, Tok::LParen) {
                    return self.call(&name, at.line, at.col);
                }
                if name == "pi" {
                    return Ok(Node::Pi);
                }
                Ok(Node::Var(self.intern(&name)))
            }
            other => Err(self.syntax(
                format!("unexpected {}", other.describe()),
                vec!["number", "identifier", "`(`", "`-`"],
            )),
        }
    }

    fn call(&mut self, name: &str, line: usize, col: usize) -> Result<Node, ParseError> {
        let func = match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "atan2" => Func::Atan2,
            _ if NON_SMOOTH_NAMES.contains(&name) => {
                return Err(ParseError::NonSmooth {
                    line,
                    col,
                    construct: format!("function `{name}`"),
                })
            }
            _ => {
                return Err(ParseError::UnknownFunction {
                    line,
                    col,
                    name: name.to_string(),
                })
            }
        };
        self.bump(); // consume `(`
        let mut args = vec![self.expression()?];
        while matches!(self.peek().tok, Tok::Comma) {
            self.bump();
            args.push(self.expression()?);
        }
        if !matches!(self.peek().tok, Tok::RParen) {
            return Err(self.syntax("unclosed argument list", vec!["`,`", "`)`"]));
        }
        self.bump();
        if args.len() != func.arity() {
            return Err(ParseError::Arity {
                line,
                col,
                name: func.name(),
                expected: func.arity(),
                got: args.len(),
            });
        }
        Ok(Node::Call(func, args))
    }

    fn intern(&mut self, name: &str) -> usize {
        if let Some(i) = self.vars.iter().position(|v| v == name) {
            return i;
        }
        self.vars.push(name.to_string());
        self.vars.len() - 1
    }
}

// ------------------------------------------------------------ evaluation --

fn finite_guard<S: Scalar>(value: S, primitive: &'static str, at: f64) -> Result<S, EvalError> {
    if scalar_all_finite(value) {
        Ok(value)
    } else {
        Err(EvalError::Domain(DomainError {
            primitive,
            argument: at,
            detail: "result is not finite",
        }))
    }
}

/// Finiteness of the primal value. Derivative components of dual scalars are
/// checked by the dual arithmetic itself where they can degenerate.
fn scalar_all_finite<S: Scalar>(v: S) -> bool {
    v.primal().is_finite()
}

fn eval_node<S: Scalar>(node: &Node, vals: &[S]) -> Result<S, EvalError> {
    match node {
        Node::Num(v) => Ok(S::constant(*v)),
        Node::Pi => Ok(S::constant(std::f64::consts::PI)),
        Node::Var(i) => Ok(vals[*i]),
        Node::Neg(x) => Ok(-eval_node(x, vals)?),
        Node::Bin(op, l, r) => {
            let a = eval_node(l, vals)?;
            let b = eval_node(r, vals)?;
            let out = match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => a.div(b)?,
                BinOp::Pow => a.pow(b)?,
            };
            let name = match op {
                BinOp::Add => "+",
                BinOp::Sub => "-",
                BinOp::Mul => "*",
                BinOp::Div => "/",
                BinOp::Pow => "^",
            };
            finite_guard(out, name, a.primal())
        }
        Node::Call(f, args) => {
            let a = eval_node(&args[0], vals)?;
            let out = match f {
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Tan => a.tan()?,
                Func::Exp => a.exp(),
                Func::Log => a.log()?,
                Func::Sqrt => a.sqrt()?,
                Func::Atan2 => {
                    let b = eval_node(&args[1], vals)?;
                    a.atan2(b)?
                }
            };
            finite_guard(out, f.name(), a.primal())
        }
    }
}

/// Evaluates an expression whose inputs are first-order duals over `S`.
/// Exposed for coordinate-map partials; ordinary callers use [`Expr::eval`].
pub fn eval_dual1<S: Scalar>(expr: &Expr, values: &[Dual1<S>]) -> Result<Dual1<S>, EvalError> {
    expr.eval_slice(values)
}

/// Convenience alias: evaluation on second-order duals.
pub fn eval_dual2(expr: &Expr, values: &[Dual2]) -> Result<Dual2, EvalError> {
    expr.eval_slice(values)
}

// --------------------------------------------------------------- unparse --

fn precedence(node: &Node) -> u8 {
    match node {
        Node::Bin(BinOp::Add | BinOp::Sub, _, _) => 1,
        Node::Bin(BinOp::Mul | BinOp::Div, _, _) => 2,
        Node::Neg(_) => 3,
        Node::Bin(BinOp::Pow, _, _) => 4,
        _ => 5,
    }
}

fn unparse_node(node: &Node, vars: &[String], _ctx: u8, out: &mut String) {
    match node {
        Node::Num(v) => {
            out.push_str(&format!("{v}"));
        }
        Node::Pi => out.push_str("pi"),
        Node::Var(i) => out.push_str(&vars[*i]),
        Node::Neg(x) => {
            out.push('-');
            wrap_if(x, vars, precedence(x) < 3, out);
        }
        Node::Bin(op, l, r) => {
            let (sym, prec) = match op {
                BinOp::Add => ("+", 1),
                BinOp::Sub => ("-", 1),
                BinOp::Mul => ("*", 2),
                BinOp::Div => ("/", 2),
                BinOp::Pow => ("^", 4),
            };
            if *op == BinOp::Pow {
                // Right-associative: parenthesize any structured base.
                wrap_if(l, vars, precedence(l) <= prec, out);
                out.push_str(sym);
                wrap_if(r, vars, precedence(r) < prec, out);
            } else {
                wrap_if(l, vars, precedence(l) < prec, out);
                out.push_str(sym);
                // Left-associative: equal precedence on the right re-groups.
                wrap_if(r, vars, precedence(r) <= prec, out);
            }
        }
        Node::Call(f, args) => {
            out.push_str(f.name());
            out.push('(');
            for (k, a) in args.iter().enumerate() {
                if k > 0 {
                    out.push_str(", ");
                }
                unparse_node(a, vars, 0, out);
            }
            out.push(')');
        }
    }
}

fn wrap_if(node: &Node, vars: &[String], wrap: bool, out: &mut String) {
    if wrap {
        out.push('(');
        unparse_node(node, vars, 0, out);
        out.push(')');
    } else {
        unparse_node(node, vars, 0, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dualnum::lift;

    fn eval_f64(src: &str, binds: &[(&str, f64)]) -> Result<f64, EvalError> {
        let e = Expr::parse(src).unwrap();
        let mut b = VarBinding::new();
        for (n, v) in binds {
            b.set(n, *v);
        }
        e.eval(&b)
    }

    #[test]
    fn multiplication_binds_tighter_than_addition() {
        assert_eq!(eval_f64("2+3*4", &[]).unwrap(), 14.0);
    }

    #[test]
    fn power_is_right_associative() {
        assert_eq!(eval_f64("2^3^2", &[]).unwrap(), 512.0);
    }

    #[test]
    fn unary_minus_binds_looser_than_power() {
        assert_eq!(eval_f64("-2^2", &[]).unwrap(), -4.0);
        assert_eq!(eval_f64("(-2)^2", &[]).unwrap(), 4.0);
    }

    #[test]
    fn negative_exponent_in_power() {
        assert_eq!(eval_f64("2^-3", &[]).unwrap(), 0.125);
    }

    #[test]
    fn pi_is_built_in() {
        let v = eval_f64("sin(pi/2)", &[]).unwrap();
        assert!((v - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn scientific_literals_parse() {
        assert_eq!(eval_f64("1.5e3", &[]).unwrap(), 1500.0);
        assert_eq!(eval_f64("2E-2", &[]).unwrap(), 0.02);
        assert_eq!(eval_f64(".5 + 1.", &[]).unwrap(), 1.5);
    }

    #[test]
    fn variables_resolve_through_bindings() {
        let v = eval_f64("q1^2 + qd1*t", &[("q1", 3.0), ("qd1", 2.0), ("t", 5.0)]).unwrap();
        assert_eq!(v, 19.0);
    }

    #[test]
    fn unbound_variable_is_named() {
        let err = eval_f64("x1 + y", &[("x1", 1.0)]).unwrap_err();
        assert_eq!(err, EvalError::Unbound { name: "y".into() });
    }

    #[test]
    fn domain_error_carries_primitive_and_value() {
        let err = eval_f64("sqrt(x1)", &[("x1", -1.0)]).unwrap_err();
        match err {
            EvalError::Domain(d) => {
                assert_eq!(d.primitive, "sqrt");
                assert_eq!(d.argument, -1.0);
            }
            other => panic!("expected domain error, got {other:?}"),
        }
        let err = eval_f64("1/x1", &[("x1", 0.0)]).unwrap_err();
        assert!(matches!(err, EvalError::Domain(d) if d.primitive == "/"));
    }

    #[test]
    fn syntax_errors_carry_position_and_expectations() {
        match Expr::parse("2 + * 3").unwrap_err() {
            ParseError::Syntax { line, col, expected, .. } => {
                assert_eq!(line, 1);
                assert_eq!(col, 5);
                assert!(expected.contains(&"number"));
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
        match Expr::parse("(1 + 2").unwrap_err() {
            ParseError::Syntax { expected, .. } => assert_eq!(expected, vec!["`)`"]),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_function_is_reported() {
        assert!(matches!(
            Expr::parse("sinh(x1)").unwrap_err(),
            ParseError::UnknownFunction { name, .. } if name == "sinh"
        ));
    }

    #[test]
    fn non_smooth_constructs_are_parse_errors() {
        assert!(matches!(
            Expr::parse("abs(x1)").unwrap_err(),
            ParseError::NonSmooth { .. }
        ));
        assert!(matches!(
            Expr::parse("floor(t)").unwrap_err(),
            ParseError::NonSmooth { .. }
        ));
        assert!(matches!(
            Expr::parse("x1 < 2").unwrap_err(),
            ParseError::NonSmooth { .. }
        ));
    }

    #[test]
    fn atan2_requires_two_arguments() {
        assert!(matches!(
            Expr::parse("atan2(x1)").unwrap_err(),
            ParseError::Arity { expected: 2, got: 1, .. }
        ));
        assert!(matches!(
            Expr::parse("sin(x1, x2)").unwrap_err(),
            ParseError::Arity { expected: 1, got: 2, .. }
        ));
    }

    #[test]
    fn plain_eval_equals_dual_value_exactly() {
        let sources = [
            "q1^2*sin(t) - qd1/(1 + q1^2)",
            "exp(q1)*cos(qd1) + sqrt(1 + t^2)",
            "atan2(q1, 2 + t) + log(3 + qd1^2)",
            "2^t + q1^3 - qd1^-2",
        ];
        for src in sources {
            let e = Expr::parse(src).unwrap();
            let point = [0.7, -1.3, 2.1];
            let names = ["q1", "qd1", "t"];
            let mut bf = VarBinding::new();
            let mut bd = VarBinding::new();
            for (n, v) in names.iter().zip(point) {
                bf.set(n, v);
                bd.set(n, lift(v, 1.0, 0.5));
            }
            let plain = e.eval(&bf).unwrap();
            let dual = e.eval(&bd).unwrap();
            assert_eq!(plain, dual.val, "value drift in `{src}`");
        }
    }

    #[test]
    fn unparse_round_trips_structurally() {
        let sources = [
            "-2^2",
            "2^3^2",
            "a - (b - c)",
            "a - b - c",
            "-(a*b) + (-a)*b",
            "(a + b)*(a - b)/(1 + a^2)",
            "atan2(a, b) + sin(cos(t))",
            "x1*-2", // parsed as x1 * (-2)
        ];
        for src in sources {
            let e = Expr::parse(src).unwrap();
            let printed = e.unparse();
            let back = Expr::parse(&printed).unwrap();
            assert_eq!(e, back, "`{src}` -> `{printed}` changed structure");
        }
    }

    #[test]
    fn first_appearance_order_of_variables() {
        let e = Expr::parse("qd2 + q1*qd2 - t").unwrap();
        assert_eq!(e.vars(), &["qd2", "q1", "t"]);
    }
}
