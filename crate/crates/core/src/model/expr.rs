//! A small arithmetic language for coefficient functions.
//!
//! Sources are strings over the variables `t`, `x1..xn`, `alpha1..alpham`,
//! `b1..bq`, `y` and `z1..zd`, numeric literals, the constant `pi`, the
//! operators `+ - * / ^` and the functions `abs min max exp log sin cos sqrt`.
//! When a group has a single component the bare name (`x`, `alpha`, `b`,
//! `z`) is accepted as an alias for the first one.
//!
//! ```
//! use impulse_game::model::expr::{Env, Expr, Signature};
//!
//! let sig = Signature::new().time().state(1);
//! let e = Expr::parse("x1 + 2*t", &sig).unwrap();
//! let v = e.eval(&Env { t: 1.0, x: &[3.0], ..Env::default() }).unwrap();
//! assert_eq!(v, 5.0);
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Var {
    T,
    X(usize),
    Alpha(usize),
    B(usize),
    Y,
    Z(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Func {
    Abs,
    Min,
    Max,
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
        }
    }

    fn variadic(self) -> bool {
        matches!(self, Func::Min | Func::Max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
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

/// Parsed expression tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// The variables an expression may reference, with their dimensions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Signature {
    pub time: bool,
    pub state: usize,
    pub action: usize,
    pub impulse: usize,
    pub value: bool,
    pub noise: usize,
}

impl Signature {
    pub fn new() -> Self {
        Self::default()
    }
    pub fn time(mut self) -> Self {
        self.time = true;
        self
    }
    pub fn state(mut self, n: usize) -> Self {
        self.state = n;
        self
    }
    pub fn action(mut self, m: usize) -> Self {
        self.action = m;
        self
    }
    pub fn impulse(mut self, q: usize) -> Self {
        self.impulse = q;
        self
    }
    pub fn value(mut self) -> Self {
        self.value = true;
        self
    }
    pub fn noise(mut self, d: usize) -> Self {
        self.noise = d;
        self
    }

    fn resolve(&self, name: &str) -> Option<Var> {
        let indexed = |prefix: &str, dim: usize, make: fn(usize) -> Var| -> Option<Var> {
            let rest = name.strip_prefix(prefix)?;
            if rest.is_empty() {
                return (dim == 1).then(|| make(0));
            }
            if rest.starts_with('0') {
                return None;
            }
            let i: usize = rest.parse().ok()?;
            (i >= 1 && i <= dim).then(|| make(i - 1))
        };
        match name {
            "t" => self.time.then_some(Var::T),
            "y" => self.value.then_some(Var::Y),
            _ if name.starts_with("alpha") => indexed("alpha", self.action, Var::Alpha),
            _ if name.starts_with('x') => indexed("x", self.state, Var::X),
            _ if name.starts_with('b') => indexed("b", self.impulse, Var::B),
            _ if name.starts_with('z') => indexed("z", self.noise, Var::Z),
            _ => None,
        }
    }
}

/// Evaluation point. Unused groups may be left empty.
#[derive(Debug, Clone, Copy)]
pub struct Env<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub alpha: &'a [f64],
    pub b: &'a [f64],
    pub y: f64,
    pub z: &'a [f64],
}

impl Default for Env<'_> {
    fn default() -> Self {
        Env {
            t: 0.0,
            x: &[],
            alpha: &[],
            b: &[],
            y: 0.0,
            z: &[],
        }
    }
}

fn component(slice: &[f64], i: usize, group: &str) -> Result<f64> {
    slice
        .get(i)
        .copied()
        .ok_or_else(|| Error::Dimension(format!("{group}{} not supplied", i + 1)))
}

impl Expr {
    pub fn parse(source: &str, sig: &Signature) -> Result<Expr> {
        if source.trim().is_empty() {
            return Err(Error::Syntax {
                pos: 0,
                msg: "empty expression".into(),
            });
        }
        let tokens = lex(source)?;
        let mut p = Parser {
            tokens,
            pos: 0,
            sig,
            len: source.len(),
        };
        let e = p.expr()?;
        if let Some(tok) = p.peek() {
            return Err(Error::Syntax {
                pos: tok.pos,
                msg: format!("unexpected {}", tok.kind),
            });
        }
        Ok(e)
    }

    pub fn constant(c: f64) -> Expr {
        Expr::Num(c)
    }

    /// `self + c`, used for shifted drivers and terminal data.
    pub fn plus(self, c: f64) -> Expr {
        Expr::Bin(BinOp::Add, Box::new(self), Box::new(Expr::Num(c)))
    }

    pub fn eval(&self, env: &Env<'_>) -> Result<f64> {
        match self {
            Expr::Num(c) => Ok(*c),
            Expr::Var(v) => match *v {
                Var::T => Ok(env.t),
                Var::Y => Ok(env.y),
                Var::X(i) => component(env.x, i, "x"),
                Var::Alpha(i) => component(env.alpha, i, "alpha"),
                Var::B(i) => component(env.b, i, "b"),
                Var::Z(i) => component(env.z, i, "z"),
            },
            Expr::Neg(e) => Ok(-e.eval(env)?),
            Expr::Bin(op, l, r) => {
                let a = l.eval(env)?;
                let b = r.eval(env)?;
                match op {
                    BinOp::Add => Ok(a + b),
                    BinOp::Sub => Ok(a - b),
                    BinOp::Mul => Ok(a * b),
                    BinOp::Div => {
                        if b == 0.0 {
                            Err(Error::Domain("division by zero".into()))
                        } else {
                            Ok(a / b)
                        }
                    }
                    BinOp::Pow => {
                        let v = a.powf(b);
                        if v.is_nan() {
                            Err(Error::Domain(format!("{a}^{b} is undefined")))
                        } else {
                            Ok(v)
                        }
                    }
                }
            }
            Expr::Call(f, args) => {
                let first = args[0].eval(env)?;
                match f {
                    Func::Abs => Ok(first.abs()),
                    Func::Exp => Ok(first.exp()),
                    Func::Sin => Ok(first.sin()),
                    Func::Cos => Ok(first.cos()),
                    Func::Log => {
                        if first <= 0.0 {
                            Err(Error::Domain(format!("log({first})")))
                        } else {
                            Ok(first.ln())
                        }
                    }
                    Func::Sqrt => {
                        if first < 0.0 {
                            Err(Error::Domain(format!("sqrt({first})")))
                        } else {
                            Ok(first.sqrt())
                        }
                    }
                    Func::Min | Func::Max => {
                        let mut acc = first;
                        for a in &args[1..] {
                            let v = a.eval(env)?;
                            acc = if *f == Func::Min { acc.min(v) } else { acc.max(v) };
                        }
                        Ok(acc)
                    }
                }
            }
        }
    }

    /// True if some variable satisfying `pred` occurs in the tree.
    pub fn uses(&self, pred: &dyn Fn(Var) -> bool) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(v) => pred(*v),
            Expr::Neg(e) => e.uses(pred),
            Expr::Bin(_, l, r) => l.uses(pred) || r.uses(pred),
            Expr::Call(_, args) => args.iter().any(|a| a.uses(pred)),
        }
    }

    pub fn is_constant(&self) -> bool {
        !self.uses(&|_| true)
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::T => write!(f, "t"),
            Var::Y => write!(f, "y"),
            Var::X(i) => write!(f, "x{}", i + 1),
            Var::Alpha(i) => write!(f, "alpha{}", i + 1),
            Var::B(i) => write!(f, "b{}", i + 1),
            Var::Z(i) => write!(f, "z{}", i + 1),
        }
    }
}

/// Fully parenthesized output that parses back to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(c) if *c < 0.0 => write!(f, "(-{:?})", -c),
            Expr::Num(c) => write!(f, "{c:?}"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

impl fmt::Display for TokKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokKind::Num(c) => write!(f, "number {c}"),
            TokKind::Ident(s) => write!(f, "identifier `{s}`"),
            TokKind::Op(c) => write!(f, "operator `{c}`"),
            TokKind::LParen => write!(f, "`(`"),
            TokKind::RParen => write!(f, "`)`"),
            TokKind::Comma => write!(f, "`,`"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    pos: usize,
}

fn lex(src: &str) -> Result<Vec<Token>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let kind = match c {
            '+' | '-' | '*' | '/' | '^' => {
                i += 1;
                TokKind::Op(c)
            }
            '(' => {
                i += 1;
                TokKind::LParen
            }
            ')' => {
                i += 1;
                TokKind::RParen
            }
            ',' => {
                i += 1;
                TokKind::Comma
            }
            '0'..='9' | '.' => {
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
                let v: f64 = text.parse().map_err(|_| Error::Syntax {
                    pos: start,
                    msg: format!("malformed number `{text}`"),
                })?;
                TokKind::Num(v)
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                TokKind::Ident(src[start..i].to_string())
            }
            other => {
                return Err(Error::Syntax {
                    pos: start,
                    msg: format!("unexpected character `{other}`"),
                })
            }
        };
        out.push(Token { kind, pos: start });
    }
    Ok(out)
}

struct Parser<'s> {
    tokens: Vec<Token>,
    pos: usize,
    sig: &'s Signature,
    len: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn eof_error(&self) -> Error {
        Error::Syntax {
            pos: self.len,
            msg: "unexpected end of expression".into(),
        }
    }

    fn peek_op(&self) -> Option<char> {
        match self.peek() {
            Some(Token {
                kind: TokKind::Op(c),
                ..
            }) => Some(*c),
            _ => None,
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(c @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(c @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.peek_op() {
            Some('-') => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let tok = self.next().ok_or_else(|| self.eof_error())?;
        match tok.kind {
            TokKind::Num(v) => Ok(Expr::Num(v)),
            TokKind::LParen => {
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            TokKind::Ident(name) => {
                let is_call = matches!(
                    self.peek(),
                    Some(Token {
                        kind: TokKind::LParen,
                        ..
                    })
                );
                if is_call {
                    let func = Func::from_name(&name).ok_or(Error::UnknownVariable {
                        name: name.clone(),
                        pos: tok.pos,
                    })?;
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while matches!(
                        self.peek(),
                        Some(Token {
                            kind: TokKind::Comma,
                            ..
                        })
                    ) {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    self.expect_rparen()?;
                    let ok = if func.variadic() {
                        args.len() >= 2
                    } else {
                        args.len() == 1
                    };
                    if !ok {
                        return Err(Error::Syntax {
                            pos: tok.pos,
                            msg: format!("wrong number of arguments to `{name}`"),
                        });
                    }
                    return Ok(Expr::Call(func, args));
                }
                if name == "pi" {
                    return Ok(Expr::Num(std::f64::consts::PI));
                }
                self.sig
                    .resolve(&name)
                    .map(Expr::Var)
                    .ok_or(Error::UnknownVariable { name, pos: tok.pos })
            }
            other => Err(Error::Syntax {
                pos: tok.pos,
                msg: format!("unexpected {other}"),
            }),
        }
    }

    fn expect_rparen(&mut self) -> Result<()> {
        match self.next() {
            Some(Token {
                kind: TokKind::RParen,
                ..
            }) => Ok(()),
            Some(t) => Err(Error::Syntax {
                pos: t.pos,
                msg: format!("expected `)`, found {}", t.kind),
            }),
            None => Err(self.eof_error()),
        }
    }
}
