//! Scalar arithmetic expressions for user-supplied flux, source and
//! initial-condition functions.
//!
//! The grammar is a small recursive-descent arithmetic language:
//!
//! ```text
//! expr    := term (("+" | "-") term)*
//! term    := unary (("*" | "/") unary)*
//! unary   := "-" unary | power
//! power   := atom ("^" unary)?
//! atom    := number | variable | "pi" | func "(" expr ")" | "(" expr ")"
//! ```
//!
//! `^` binds tightest and is right-associative, so `-u^2` is `-(u^2)` and
//! `2^3^2` is `2^(3^2)`. Variables are `u`, `x`, `t` and `x0`. Functions are
//! `sin cos tan exp ln sqrt abs arctan arccos`.
//!
//! Evaluation never returns NaN or an infinity: anything outside a function's
//! domain is reported as [`ExprError::Domain`].

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("unbound variable `{0}`")]
    Unbound(Var),
    #[error("domain error in {op} (argument {arg})")]
    Domain { op: &'static str, arg: f64 },
}

/// Free variables an expression may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    U,
    X,
    T,
    X0,
}

impl Var {
    pub const ALL: [Var; 4] = [Var::U, Var::X, Var::T, Var::X0];

    pub fn name(self) -> &'static str {
        match self {
            Var::U => "u",
            Var::X => "x",
            Var::T => "t",
            Var::X0 => "x0",
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    fn from_name(name: &str) -> Option<Var> {
        Var::ALL.into_iter().find(|v| v.name() == name)
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Arctan,
    Arccos,
}

impl Func {
    const ALL: [Func; 9] = [
        Func::Sin,
        Func::Cos,
        Func::Tan,
        Func::Exp,
        Func::Ln,
        Func::Sqrt,
        Func::Abs,
        Func::Arctan,
        Func::Arccos,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Arctan => "arctan",
            Func::Arccos => "arccos",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }

    fn apply(self, a: f64) -> Result<f64, ExprError> {
        let domain = |op| Err(ExprError::Domain { op, arg: a });
        match self {
            Func::Sin => Ok(a.sin()),
            Func::Cos => Ok(a.cos()),
            Func::Tan => Ok(a.tan()),
            Func::Exp => Ok(a.exp()),
            Func::Ln if a <= 0.0 => domain("ln"),
            Func::Ln => Ok(a.ln()),
            Func::Sqrt if a < 0.0 => domain("sqrt"),
            Func::Sqrt => Ok(a.sqrt()),
            Func::Abs => Ok(a.abs()),
            Func::Arctan => Ok(a.atan()),
            Func::Arccos if !(-1.0..=1.0).contains(&a) => domain("arccos"),
            Func::Arccos => Ok(a.acos()),
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

    pub fn apply(self, a: f64, b: f64) -> Result<f64, ExprError> {
        match self {
            BinOp::Add => Ok(a + b),
            BinOp::Sub => Ok(a - b),
            BinOp::Mul => Ok(a * b),
            BinOp::Div if b == 0.0 => Err(ExprError::Domain { op: "division", arg: b }),
            BinOp::Div => Ok(a / b),
            BinOp::Pow => pow(a, b),
        }
    }
}

fn pow(base: f64, exponent: f64) -> Result<f64, ExprError> {
    if base < 0.0 && exponent.fract() != 0.0 {
        return Err(ExprError::Domain { op: "fractional power", arg: base });
    }
    if base == 0.0 && exponent < 0.0 {
        return Err(ExprError::Domain { op: "negative power", arg: base });
    }
    Ok(base.powf(exponent))
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

const PREC_SUM: u8 = 1;
const PREC_PRODUCT: u8 = 2;
const PREC_UNARY: u8 = 3;
const PREC_POWER: u8 = 4;
const PREC_ATOM: u8 = 5;

impl Node {
    fn precedence(&self) -> u8 {
        match self {
            Node::Num(_) | Node::Var(_) | Node::Call(..) => PREC_ATOM,
            Node::Neg(_) => PREC_UNARY,
            Node::Bin(BinOp::Add | BinOp::Sub, ..) => PREC_SUM,
            Node::Bin(BinOp::Mul | BinOp::Div, ..) => PREC_PRODUCT,
            Node::Bin(BinOp::Pow, ..) => PREC_POWER,
        }
    }

    fn eval(&self, vars: &[Option<f64>; 4]) -> Result<f64, ExprError> {
        let value = match self {
            Node::Num(v) => *v,
            Node::Var(v) => vars[v.index()].ok_or(ExprError::Unbound(*v))?,
            Node::Neg(e) => -e.eval(vars)?,
            Node::Bin(op, l, r) => op.apply(l.eval(vars)?, r.eval(vars)?)?,
            Node::Call(f, a) => f.apply(a.eval(vars)?)?,
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(ExprError::Domain { op: "overflow", arg: value })
        }
    }

    fn collect_vars(&self, out: &mut Vec<Var>) {
        match self {
            Node::Num(_) => {}
            Node::Var(v) => {
                if !out.contains(v) {
                    out.push(*v);
                }
            }
            Node::Neg(e) | Node::Call(_, e) => e.collect_vars(out),
            Node::Bin(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
        }
    }

    fn write(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Num(v) => write!(f, "{v:?}"),
            Node::Var(v) => f.write_str(v.name()),
            Node::Call(func, a) => {
                write!(f, "{}(", func.name())?;
                a.write(f)?;
                f.write_str(")")
            }
            Node::Neg(e) => {
                f.write_str("-")?;
                write_operand(f, e, e.precedence() < PREC_UNARY)
            }
            Node::Bin(op, l, r) => {
                let (left_parens, right_parens) = match op {
                    BinOp::Pow => (l.precedence() <= PREC_POWER, r.precedence() < PREC_UNARY),
                    _ => {
                        let p = self.precedence();
                        (l.precedence() < p, r.precedence() <= p)
                    }
                };
                write_operand(f, l, left_parens)?;
                write!(f, "{}", op.symbol())?;
                write_operand(f, r, right_parens)
            }
        }
    }
}

fn write_operand(f: &mut fmt::Formatter<'_>, node: &Node, parens: bool) -> fmt::Result {
    if parens {
        f.write_str("(")?;
        node.write(f)?;
        f.write_str(")")
    } else {
        node.write(f)
    }
}

/// Values for the free variables of an expression.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Bindings {
    values: [Option<f64>; 4],
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, var: Var, value: f64) -> Self {
        self.values[var.index()] = Some(value);
        self
    }

    pub fn u(self, value: f64) -> Self {
        self.with(Var::U, value)
    }

    pub fn x(self, value: f64) -> Self {
        self.with(Var::X, value)
    }

    pub fn t(self, value: f64) -> Self {
        self.with(Var::T, value)
    }

    pub fn x0(self, value: f64) -> Self {
        self.with(Var::X0, value)
    }

    pub fn get(&self, var: Var) -> Option<f64> {
        self.values[var.index()]
    }

    /// Builds bindings from `name -> value` pairs; unknown names are rejected.
    pub fn from_pairs<'a, I>(pairs: I) -> Result<Self, ExprError>
    where
        I: IntoIterator<Item = (&'a str, f64)>,
    {
        let mut b = Bindings::new();
        for (name, value) in pairs {
            let var = Var::from_name(name).ok_or_else(|| ExprError::UnknownIdentifier {
                name: name.to_string(),
                offset: 0,
            })?;
            b = b.with(var, value);
        }
        Ok(b)
    }
}

/// A parsed, immutable expression tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
}

impl Expr {
    pub fn parse(source: &str) -> Result<Expr, ExprError> {
        let tokens = tokenize(source)?;
        let mut parser = Parser { tokens: &tokens, pos: 0, len: source.len() };
        let root = parser.expr()?;
        if let Some(tok) = parser.peek() {
            return Err(ExprError::Syntax {
                offset: tok.offset,
                message: format!("unexpected {}", tok.token.describe()),
            });
        }
        Ok(Expr { root })
    }

    pub fn constant(value: f64) -> Expr {
        Expr { root: Node::Num(value) }
    }

    pub fn eval(&self, bindings: &Bindings) -> Result<f64, ExprError> {
        self.root.eval(&bindings.values)
    }

    /// Evaluates with every variable bound, in the order `u, x, t, x0`.
    pub fn eval_at(&self, u: f64, x: f64, t: f64, x0: f64) -> Result<f64, ExprError> {
        self.root.eval(&[Some(u), Some(x), Some(t), Some(x0)])
    }

    /// Free variables in first-occurrence order.
    pub fn variables(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.root.collect_vars(&mut out);
        out
    }

    pub fn is_constant(&self) -> bool {
        self.variables().is_empty()
    }
}

impl FromStr for Expr {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expr::parse(s)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.write(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Token {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

impl Token {
    fn describe(&self) -> String {
        match self {
            Token::Num(v) => format!("number {v}"),
            Token::Ident(s) => format!("identifier `{s}`"),
            Token::Op(c) => format!("operator `{c}`"),
            Token::LParen => "`(`".to_string(),
            Token::RParen => "`)`".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpannedToken {
    pub token: Token,
    pub offset: usize,
}

/// Splits source text into tokens with their byte offsets.
pub fn tokenize(source: &str) -> Result<Vec<SpannedToken>, ExprError> {
    let bytes = source.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let token = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' | b'-' | b'*' | b'/' | b'^' => {
                i += 1;
                Token::Op(c as char)
            }
            b'(' => {
                i += 1;
                Token::LParen
            }
            b')' => {
                i += 1;
                Token::RParen
            }
            b'0'..=b'9' | b'.' => {
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
                let text = &source[start..i];
                let value = text.parse::<f64>().map_err(|_| ExprError::Syntax {
                    offset: start,
                    message: format!("malformed number `{text}`"),
                })?;
                Token::Num(value)
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                Token::Ident(source[start..i].to_string())
            }
            _ => {
                let ch = source[start..].chars().next().unwrap_or('?');
                return Err(ExprError::Syntax {
                    offset: start,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        };
        out.push(SpannedToken { token, offset: start });
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [SpannedToken],
    pos: usize,
    len: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&SpannedToken> {
        self.tokens.get(self.pos)
    }

    fn peek_op(&self) -> Option<char> {
        match self.peek().map(|t| &t.token) {
            Some(Token::Op(c)) => Some(*c),
            _ => None,
        }
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.len, |t| t.offset)
    }

    fn error(&self, message: impl Into<String>) -> ExprError {
        ExprError::Syntax { offset: self.offset(), message: message.into() }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if op == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            let op = if op == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.peek_op() == Some('-') {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        match self.peek().map(|t| &t.token) {
            Some(Token::RParen) => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.error("expected `)`")),
        }
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let Some(tok) = self.peek().cloned() else {
            return Err(self.error("unexpected end of input"));
        };
        self.pos += 1;
        match tok.token {
            Token::Num(v) => Ok(Node::Num(v)),
            Token::LParen => {
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Token::Ident(name) => {
                if let Some(var) = Var::from_name(&name) {
                    return Ok(Node::Var(var));
                }
                if name == "pi" {
                    return Ok(Node::Num(std::f64::consts::PI));
                }
                if let Some(func) = Func::from_name(&name) {
                    if self.peek().map(|t| &t.token) != Some(&Token::LParen) {
                        return Err(self.error(format!("expected `(` after `{name}`")));
                    }
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    return Ok(Node::Call(func, Box::new(arg)));
                }
                Err(ExprError::UnknownIdentifier { name, offset: tok.offset })
            }
            other => {
                Err(ExprError::Syntax { offset: tok.offset, message: format!("unexpected {}", other.describe()) })
            }
        }
    }
}
