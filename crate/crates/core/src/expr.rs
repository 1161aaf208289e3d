//! A small arithmetic expression language with exact differentiation.
//!
//! Symbols, weights and generating functions are entered as strings such as
//! `exp(-x^2 - theta^2)` or `bracket(x, theta)^-1`. Parsed expressions
//! evaluate on plain `f64` points and on Taylor [`Jet`]s, and can be
//! differentiated symbolically.
//!
//! Functions: `exp`, `ln`, `sqrt`, `sin`, `cos`, `bracket(a, ..)` for
//! `(1 + a² + ..)^{1/2}`, `norm(a, ..)` and `|a, ..|` for the Euclidean norm.
//! Exponents after `^` must be constant. A group name (by default `v`, all
//! variables) inside `bracket`, `norm` or bars expands to its components.

use std::fmt;

use crate::error::{Error, Result};
use crate::jet::Jet;

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Pow(Box<Expr>, f64),
    Exp(Box<Expr>),
    Ln(Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
}

/// Named coordinates an expression may refer to.
#[derive(Clone, Debug, PartialEq)]
pub struct VarSpace {
    names: Vec<String>,
    groups: Vec<(String, Vec<usize>)>,
}

impl VarSpace {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Self {
        let names: Vec<String> = names.iter().map(|s| s.as_ref().to_string()).collect();
        let all = (0..names.len()).collect();
        VarSpace {
            names,
            groups: vec![("v".to_string(), all)],
        }
    }

    pub fn with_group(mut self, name: &str, members: Vec<usize>) -> Self {
        self.groups.push((name.to_string(), members));
        self
    }

    /// `v1..vd` (or `v` when `d = 1`), used for weights on `ℝ^d`.
    pub fn weight(dim: usize) -> Self {
        if dim == 1 {
            VarSpace::new(&["v"])
        } else {
            let names: Vec<String> = (1..=dim).map(|i| format!("v{i}")).collect();
            VarSpace::new(&names)
        }
    }

    /// `x, theta` for n = 1, else `x1..xn, theta1..thetan`.
    pub fn x_theta(n: usize) -> Self {
        let names = split_names(n, &["x", "theta"]);
        VarSpace::new(&names)
            .with_group("x", (0..n).collect())
            .with_group("theta", (n..2 * n).collect())
    }

    /// `x, y, theta` blocks of size `n`.
    pub fn x_y_theta(n: usize) -> Self {
        let names = split_names(n, &["x", "y", "theta"]);
        VarSpace::new(&names)
            .with_group("x", (0..n).collect())
            .with_group("y", (n..2 * n).collect())
            .with_group("theta", (2 * n..3 * n).collect())
    }

    /// `x, y` blocks of size `n` and a `theta` block of size `big_n`.
    pub fn x_y_theta_dims(n: usize, big_n: usize) -> Self {
        let mut names = split_names(n, &["x", "y"]);
        names.extend(split_names(big_n, &["theta"]));
        VarSpace::new(&names)
            .with_group("x", (0..n).collect())
            .with_group("y", (n..2 * n).collect())
            .with_group("theta", (2 * n..2 * n + big_n).collect())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn var(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn group(&self, name: &str) -> Option<&[usize]> {
        self.groups
            .iter()
            .rev()
            .find(|(g, _)| g == name)
            .map(|(_, m)| m.as_slice())
    }
}

fn split_names(n: usize, blocks: &[&str]) -> Vec<String> {
    blocks
        .iter()
        .flat_map(|b| {
            if n == 1 {
                vec![b.to_string()]
            } else {
                (1..=n).map(|i| format!("{b}{i}")).collect()
            }
        })
        .collect()
}

impl Expr {
    pub fn parse(src: &str, vars: &VarSpace) -> Result<Expr> {
        let tokens = tokenize(src)?;
        let mut p = Parser {
            tokens,
            pos: 0,
            vars,
        };
        let e = p.expr()?;
        if let Some(t) = p.tokens.get(p.pos) {
            return Err(Error::Parse {
                column: t.column,
                message: format!("unexpected token {:?}", t.kind),
            });
        }
        Ok(e)
    }

    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    /// `(1 + Σ e_i²)^{1/2}`.
    pub fn bracket(items: Vec<Expr>) -> Expr {
        let sum = items
            .into_iter()
            .fold(Expr::Const(1.0), |acc, e| add(acc, pow(e, 2.0)));
        pow(sum, 0.5)
    }

    pub fn norm(items: Vec<Expr>) -> Expr {
        let sum = items
            .into_iter()
            .fold(Expr::Const(0.0), |acc, e| add(acc, pow(e, 2.0)));
        pow(sum, 0.5)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    /// Largest variable index referenced, plus one.
    pub fn arity(&self) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Var(i) => i + 1,
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.arity().max(b.arity())
            }
            Expr::Neg(a)
            | Expr::Pow(a, _)
            | Expr::Exp(a)
            | Expr::Ln(a)
            | Expr::Sin(a)
            | Expr::Cos(a) => a.arity(),
        }
    }

    pub fn eval(&self, p: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => p[*i],
            Expr::Add(a, b) => a.eval(p) + b.eval(p),
            Expr::Sub(a, b) => a.eval(p) - b.eval(p),
            Expr::Mul(a, b) => a.eval(p) * b.eval(p),
            Expr::Div(a, b) => a.eval(p) / b.eval(p),
            Expr::Neg(a) => -a.eval(p),
            Expr::Pow(a, e) => {
                let base = a.eval(p);
                if e.fract() == 0.0 && e.abs() <= 64.0 {
                    base.powi(*e as i32)
                } else {
                    base.powf(*e)
                }
            }
            Expr::Exp(a) => a.eval(p).exp(),
            Expr::Ln(a) => a.eval(p).ln(),
            Expr::Sin(a) => a.eval(p).sin(),
            Expr::Cos(a) => a.eval(p).cos(),
        }
    }

    /// Evaluates on Taylor jets, one per variable.
    pub fn eval_jet(&self, vars: &[Jet]) -> Jet {
        let space = vars[0].space();
        match self {
            Expr::Const(c) => Jet::constant(space, *c),
            Expr::Var(i) => vars[*i].clone(),
            Expr::Add(a, b) => a.eval_jet(vars) + b.eval_jet(vars),
            Expr::Sub(a, b) => a.eval_jet(vars) - b.eval_jet(vars),
            Expr::Mul(a, b) => {
                if let Some(c) = a.as_const() {
                    b.eval_jet(vars).scale(c)
                } else if let Some(c) = b.as_const() {
                    a.eval_jet(vars).scale(c)
                } else {
                    a.eval_jet(vars) * b.eval_jet(vars)
                }
            }
            Expr::Div(a, b) => match b.as_const() {
                Some(c) => a.eval_jet(vars).scale(1.0 / c),
                None => a.eval_jet(vars) * b.eval_jet(vars).recip(),
            },
            Expr::Neg(a) => a.eval_jet(vars).scale(-1.0),
            Expr::Pow(a, e) => a.eval_jet(vars).powf(*e),
            Expr::Exp(a) => a.eval_jet(vars).exp(),
            Expr::Ln(a) => a.eval_jet(vars).ln(),
            Expr::Sin(a) => a.eval_jet(vars).sin(),
            Expr::Cos(a) => a.eval_jet(vars).cos(),
        }
    }

    /// Symbolic partial derivative with respect to variable `j`.
    pub fn diff(&self, j: usize) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(i) => Expr::Const(if *i == j { 1.0 } else { 0.0 }),
            Expr::Add(a, b) => add(a.diff(j), b.diff(j)),
            Expr::Sub(a, b) => sub(a.diff(j), b.diff(j)),
            Expr::Mul(a, b) => add(
                mul(a.diff(j), (**b).clone()),
                mul((**a).clone(), b.diff(j)),
            ),
            Expr::Div(a, b) => {
                // (a'b - ab') / b²
                let num = sub(
                    mul(a.diff(j), (**b).clone()),
                    mul((**a).clone(), b.diff(j)),
                );
                div(num, pow((**b).clone(), 2.0))
            }
            Expr::Neg(a) => neg(a.diff(j)),
            Expr::Pow(a, e) => mul(
                mul(Expr::Const(*e), pow((**a).clone(), e - 1.0)),
                a.diff(j),
            ),
            Expr::Exp(a) => mul(self.clone(), a.diff(j)),
            Expr::Ln(a) => div(a.diff(j), (**a).clone()),
            Expr::Sin(a) => mul(Expr::Cos(a.clone()), a.diff(j)),
            Expr::Cos(a) => neg(mul(Expr::Sin(a.clone()), a.diff(j))),
        }
    }

    /// `∂^α` applied symbolically.
    pub fn diff_multi(&self, alpha: &[usize]) -> Expr {
        let mut e = self.clone();
        for (j, &k) in alpha.iter().enumerate() {
            for _ in 0..k {
                e = e.diff(j);
            }
        }
        e
    }

    /// Renames variables: `Var(i)` becomes `Var(map[i])`.
    pub fn remap(&self, map: &[usize]) -> Expr {
        let r = |e: &Expr| Box::new(e.remap(map));
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(i) => Expr::Var(map[*i]),
            Expr::Add(a, b) => Expr::Add(r(a), r(b)),
            Expr::Sub(a, b) => Expr::Sub(r(a), r(b)),
            Expr::Mul(a, b) => Expr::Mul(r(a), r(b)),
            Expr::Div(a, b) => Expr::Div(r(a), r(b)),
            Expr::Neg(a) => Expr::Neg(r(a)),
            Expr::Pow(a, e) => Expr::Pow(r(a), *e),
            Expr::Exp(a) => Expr::Exp(r(a)),
            Expr::Ln(a) => Expr::Ln(r(a)),
            Expr::Sin(a) => Expr::Sin(r(a)),
            Expr::Cos(a) => Expr::Cos(r(a)),
        }
    }

    /// Renders with the given variable names; the result parses back.
    pub fn display<'a>(&'a self, vars: &'a VarSpace) -> ExprDisplay<'a> {
        ExprDisplay { expr: self, vars }
    }
}

pub struct ExprDisplay<'a> {
    expr: &'a Expr,
    vars: &'a VarSpace,
}

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(f, self.expr, self.vars)
    }
}

fn write_expr(f: &mut fmt::Formatter<'_>, e: &Expr, v: &VarSpace) -> fmt::Result {
    let sub = |f: &mut fmt::Formatter<'_>, e: &Expr| -> fmt::Result {
        write!(f, "(")?;
        write_expr(f, e, v)?;
        write!(f, ")")
    };
    match e {
        Expr::Const(c) => {
            if *c < 0.0 {
                write!(f, "({c:?})")
            } else {
                write!(f, "{c:?}")
            }
        }
        Expr::Var(i) => write!(f, "{}", v.names[*i]),
        Expr::Add(a, b) => {
            sub(f, a)?;
            write!(f, " + ")?;
            sub(f, b)
        }
        Expr::Sub(a, b) => {
            sub(f, a)?;
            write!(f, " - ")?;
            sub(f, b)
        }
        Expr::Mul(a, b) => {
            sub(f, a)?;
            write!(f, " * ")?;
            sub(f, b)
        }
        Expr::Div(a, b) => {
            sub(f, a)?;
            write!(f, " / ")?;
            sub(f, b)
        }
        Expr::Neg(a) => {
            write!(f, "-")?;
            sub(f, a)
        }
        Expr::Pow(a, p) => {
            sub(f, a)?;
            if *p < 0.0 {
                write!(f, "^({p:?})")
            } else {
                write!(f, "^{p:?}")
            }
        }
        Expr::Exp(a) => {
            write!(f, "exp")?;
            sub(f, a)
        }
        Expr::Ln(a) => {
            write!(f, "ln")?;
            sub(f, a)
        }
        Expr::Sin(a) => {
            write!(f, "sin")?;
            sub(f, a)
        }
        Expr::Cos(a) => {
            write!(f, "cos")?;
            sub(f, a)
        }
    }
}

// Simplifying constructors.

pub fn add(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x + y),
        (Some(x), _) if x == 0.0 => b,
        (_, Some(y)) if y == 0.0 => a,
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

pub fn sub(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x - y),
        (Some(x), _) if x == 0.0 => neg(b),
        (_, Some(y)) if y == 0.0 => a,
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

pub fn mul(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x * y),
        (Some(x), _) | (_, Some(x)) if x == 0.0 => Expr::Const(0.0),
        (Some(x), _) if x == 1.0 => b,
        (_, Some(y)) if y == 1.0 => a,
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

pub fn div(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x / y),
        (Some(x), _) if x == 0.0 => Expr::Const(0.0),
        (_, Some(y)) if y == 1.0 => a,
        _ => Expr::Div(Box::new(a), Box::new(b)),
    }
}

pub fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(x) => Expr::Const(-x),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

pub fn pow(a: Expr, p: f64) -> Expr {
    if p == 0.0 {
        return Expr::Const(1.0);
    }
    if p == 1.0 {
        return a;
    }
    match a {
        Expr::Const(x) => Expr::Const(x.powf(p)),
        other => Expr::Pow(Box::new(other), p),
    }
}

#[derive(Clone, Debug, PartialEq)]
enum TokenKind {
    Num(f64),
    Ident(String),
    Op(char),
}

#[derive(Clone, Debug)]
struct Token {
    kind: TokenKind,
    column: usize,
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let save = i;
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                if i < chars.len() && chars[i].is_ascii_digit() {
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let text: String = chars[start..i].iter().collect();
            let value = text.parse::<f64>().map_err(|_| Error::Parse {
                column,
                message: format!("bad number {text:?}"),
            })?;
            out.push(Token {
                kind: TokenKind::Num(value),
                column,
            });
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token {
                kind: TokenKind::Ident(chars[start..i].iter().collect()),
                column,
            });
        } else if "+-*/^(),|".contains(c) {
            out.push(Token {
                kind: TokenKind::Op(c),
                column,
            });
            i += 1;
        } else {
            return Err(Error::Parse {
                column,
                message: format!("unexpected character {c:?}"),
            });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    vars: &'a VarSpace,
}

impl Parser<'_> {
    fn peek_op(&self, op: char) -> bool {
        matches!(self.tokens.get(self.pos), Some(Token { kind: TokenKind::Op(c), .. }) if *c == op)
    }

    fn column(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|t| t.column)
            .or_else(|| self.tokens.last().map(|t| t.column + 1))
            .unwrap_or(1)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            column: self.column(),
            message: message.into(),
        })
    }

    fn expect(&mut self, op: char) -> Result<()> {
        if self.peek_op(op) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected {op:?}"))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.peek_op('+') {
                self.pos += 1;
                lhs = add(lhs, self.term()?);
            } else if self.peek_op('-') {
                self.pos += 1;
                lhs = sub(lhs, self.term()?);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.peek_op('*') {
                self.pos += 1;
                lhs = mul(lhs, self.unary()?);
            } else if self.peek_op('/') {
                self.pos += 1;
                lhs = div(lhs, self.unary()?);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek_op('-') {
            self.pos += 1;
            return Ok(neg(self.unary()?));
        }
        if self.peek_op('+') {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek_op('^') {
            self.pos += 1;
            let exp = self.unary()?;
            let Some(p) = exp.as_const() else {
                return self.err("exponent must be a constant");
            };
            return Ok(pow(base, p));
        }
        Ok(base)
    }

    fn args(&mut self, close: char) -> Result<Vec<Expr>> {
        let mut items = Vec::new();
        loop {
            // A bare group name expands to its members.
            if let Some(Token {
                kind: TokenKind::Ident(name),
                ..
            }) = self.tokens.get(self.pos)
            {
                let next_is_sep = matches!(
                    self.tokens.get(self.pos + 1),
                    Some(Token { kind: TokenKind::Op(c), .. }) if *c == ',' || *c == close
                );
                if next_is_sep && self.vars.var(name).is_none() {
                    if let Some(members) = self.vars.group(name) {
                        items.extend(members.iter().map(|&i| Expr::Var(i)));
                        self.pos += 1;
                        if self.peek_op(',') {
                            self.pos += 1;
                            continue;
                        }
                        break;
                    }
                }
            }
            items.push(self.expr()?);
            if self.peek_op(',') {
                self.pos += 1;
            } else {
                break;
            }
        }
        self.expect(close)?;
        Ok(items)
    }

    fn atom(&mut self) -> Result<Expr> {
        let Some(tok) = self.tokens.get(self.pos).cloned() else {
            return self.err("unexpected end of expression");
        };
        self.pos += 1;
        match tok.kind {
            TokenKind::Num(v) => Ok(Expr::Const(v)),
            TokenKind::Op('(') => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            TokenKind::Op('|') => {
                let items = self.args('|')?;
                Ok(Expr::norm(items))
            }
            TokenKind::Ident(name) => {
                if self.peek_op('(') {
                    self.pos += 1;
                    let items = self.args(')')?;
                    let one = |items: Vec<Expr>, p: &Self| -> Result<Box<Expr>> {
                        if items.len() != 1 {
                            return Err(Error::Parse {
                                column: tok.column,
                                message: format!("{name} takes one argument"),
                            });
                        }
                        let _ = p;
                        Ok(Box::new(items.into_iter().next().unwrap()))
                    };
                    return match name.as_str() {
                        "exp" => Ok(Expr::Exp(one(items, self)?)),
                        "ln" | "log" => Ok(Expr::Ln(one(items, self)?)),
                        "sin" => Ok(Expr::Sin(one(items, self)?)),
                        "cos" => Ok(Expr::Cos(one(items, self)?)),
                        "sqrt" => Ok(pow(*one(items, self)?, 0.5)),
                        "bracket" => Ok(Expr::bracket(items)),
                        "norm" => Ok(Expr::norm(items)),
                        _ => Err(Error::Parse {
                            column: tok.column,
                            message: format!("unknown function {name:?}"),
                        }),
                    };
                }
                if name == "pi" {
                    return Ok(Expr::Const(std::f64::consts::PI));
                }
                if let Some(i) = self.vars.var(&name) {
                    return Ok(Expr::Var(i));
                }
                if let Some(members) = self.vars.group(&name) {
                    if members.len() == 1 {
                        return Ok(Expr::Var(members[0]));
                    }
                }
                Err(Error::Parse {
                    column: tok.column,
                    message: format!("unknown variable {name:?}"),
                })
            }
            TokenKind::Op(c) => Err(Error::Parse {
                column: tok.column,
                message: format!("unexpected {c:?}"),
            }),
        }
    }
}
