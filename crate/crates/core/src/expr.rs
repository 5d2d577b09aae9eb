//! Scalar expression language used in metric files.
//!
//! Grammar (usual precedence, `^` right associative):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | ident | ident '(' expr ')' | '(' expr ')'
//! ```

use std::collections::HashMap;
use std::fmt;

use crate::jet::{Jet3, JetError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Span {
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
    Tan,
    Sinh,
    Cosh,
}

impl Func {
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sqrt" => Func::Sqrt,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Sinh => "sinh",
            Func::Cosh => "cosh",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Exp => x.exp(),
            Func::Log => x.ln(),
            Func::Sqrt => x.sqrt(),
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Tan => x.tan(),
            Func::Sinh => x.sinh(),
            Func::Cosh => x.cosh(),
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
    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => " + ",
            BinOp::Sub => " - ",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone)]
pub enum ExprKind {
    Num(f64),
    Ident(String),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Expression node. Equality is structural and ignores source positions.
#[derive(Debug, Clone)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        match (&self.kind, &other.kind) {
            (ExprKind::Num(a), ExprKind::Num(b)) => a.to_bits() == b.to_bits(),
            (ExprKind::Ident(a), ExprKind::Ident(b)) => a == b,
            (ExprKind::Neg(a), ExprKind::Neg(b)) => a == b,
            (ExprKind::Binary(o1, a1, b1), ExprKind::Binary(o2, a2, b2)) => {
                o1 == o2 && a1 == a2 && b1 == b2
            }
            (ExprKind::Call(f1, a1), ExprKind::Call(f2, a2)) => f1 == f2 && a1 == a2,
            _ => false,
        }
    }
}

impl Expr {
    pub fn num(v: f64) -> Self {
        ExprKind::Num(v).into()
    }

    pub fn ident(name: impl Into<String>) -> Self {
        ExprKind::Ident(name.into()).into()
    }

    pub fn neg(e: Expr) -> Self {
        ExprKind::Neg(Box::new(e)).into()
    }

    pub fn binary(op: BinOp, a: Expr, b: Expr) -> Self {
        ExprKind::Binary(op, Box::new(a), Box::new(b)).into()
    }

    pub fn call(f: Func, a: Expr) -> Self {
        ExprKind::Call(f, Box::new(a)).into()
    }

    pub fn is_zero_literal(&self) -> bool {
        matches!(self.kind, ExprKind::Num(v) if v == 0.0)
    }

    /// All identifiers referenced by the expression, in first-use order.
    pub fn identifiers(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_identifiers(&mut out);
        out
    }

    fn collect_identifiers(&self, out: &mut Vec<String>) {
        match &self.kind {
            ExprKind::Num(_) => {}
            ExprKind::Ident(name) => {
                if !out.contains(name) {
                    out.push(name.clone());
                }
            }
            ExprKind::Neg(a) | ExprKind::Call(_, a) => a.collect_identifiers(out),
            ExprKind::Binary(_, a, b) => {
                a.collect_identifiers(out);
                b.collect_identifiers(out);
            }
        }
    }

    /// Copy with numeric subtrees folded to literals. Used for structural
    /// comparisons, never for evaluation.
    pub fn folded(&self) -> Expr {
        let kind = match &self.kind {
            ExprKind::Num(v) => ExprKind::Num(*v),
            ExprKind::Ident(n) => ExprKind::Ident(n.clone()),
            ExprKind::Neg(a) => {
                let a = a.folded();
                match a.kind {
                    ExprKind::Num(v) => ExprKind::Num(-v),
                    _ => ExprKind::Neg(Box::new(a)),
                }
            }
            ExprKind::Call(f, a) => {
                let a = a.folded();
                match a.kind {
                    ExprKind::Num(v) => ExprKind::Num(f.apply(v)),
                    _ => ExprKind::Call(*f, Box::new(a)),
                }
            }
            ExprKind::Binary(op, a, b) => {
                let (a, b) = (a.folded(), b.folded());
                match (&a.kind, &b.kind) {
                    (ExprKind::Num(x), ExprKind::Num(y)) => ExprKind::Num(match op {
                        BinOp::Add => x + y,
                        BinOp::Sub => x - y,
                        BinOp::Mul => x * y,
                        BinOp::Div => x / y,
                        BinOp::Pow => x.powf(*y),
                    }),
                    _ => ExprKind::Binary(*op, Box::new(a), Box::new(b)),
                }
            }
        };
        Expr { kind, span: self.span }
    }

    /// Replaces identifiers according to `map`.
    pub fn substitute(&self, map: &HashMap<String, Expr>) -> Expr {
        let kind = match &self.kind {
            ExprKind::Ident(n) => match map.get(n) {
                Some(e) => return e.clone(),
                None => ExprKind::Ident(n.clone()),
            },
            ExprKind::Num(v) => ExprKind::Num(*v),
            ExprKind::Neg(a) => ExprKind::Neg(Box::new(a.substitute(map))),
            ExprKind::Call(f, a) => ExprKind::Call(*f, Box::new(a.substitute(map))),
            ExprKind::Binary(op, a, b) => {
                ExprKind::Binary(*op, Box::new(a.substitute(map)), Box::new(b.substitute(map)))
            }
        };
        Expr { kind, span: self.span }
    }

    fn precedence(&self) -> u8 {
        match &self.kind {
            ExprKind::Binary(op, _, _) => op.precedence(),
            ExprKind::Neg(_) => 3,
            _ => 5,
        }
    }
}

impl From<ExprKind> for Expr {
    fn from(kind: ExprKind) -> Self {
        Expr {
            kind,
            span: Span::default(),
        }
    }
}

fn write_num(f: &mut fmt::Formatter<'_>, v: f64) -> fmt::Result {
    if v < 0.0 || (v == 0.0 && v.is_sign_negative()) {
        write!(f, "(-{})", -v)
    } else {
        write!(f, "{v}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ExprKind::Num(v) => write_num(f, *v),
            ExprKind::Ident(n) => write!(f, "{n}"),
            ExprKind::Call(func, a) => write!(f, "{}({})", func.name(), a),
            ExprKind::Neg(a) => {
                if a.precedence() <= 3 {
                    write!(f, "-({a})")
                } else {
                    write!(f, "-{a}")
                }
            }
            ExprKind::Binary(op, a, b) => {
                let p = op.precedence();
                // Left operand: parenthesize lower precedence; for the right
                // associative power also parenthesize equal precedence.
                let left_paren = a.precedence() < p || (*op == BinOp::Pow && a.precedence() <= p);
                let right_paren = match op {
                    BinOp::Pow => b.precedence() < 3,
                    // Parsing is left-associative, so an equal-precedence
                    // right operand always needs brackets to keep its shape.
                    _ => b.precedence() <= p,
                };
                if left_paren {
                    write!(f, "({a})")?;
                } else {
                    write!(f, "{a}")?;
                }
                f.write_str(op.symbol())?;
                if right_paren {
                    write!(f, "({b})")
                } else {
                    write!(f, "{b}")
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{line}:{col}: {message}")]
pub struct SyntaxError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    col0: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(mut self) -> Result<Vec<(Tok, Span)>, SyntaxError> {
        let mut out = Vec::new();
        while self.pos < self.src.len() {
            let c = self.src[self.pos] as char;
            let span = Span {
                line: self.line,
                col: self.col0 + self.pos + 1,
            };
            if c.is_ascii_whitespace() {
                self.pos += 1;
            } else if c.is_ascii_digit() || c == '.' {
                let start = self.pos;
                while self.pos < self.src.len() {
                    let d = self.src[self.pos] as char;
                    let exp_sign = (d == '+' || d == '-')
                        && matches!(self.src[self.pos - 1] as char, 'e' | 'E')
                        && self.pos > start;
                    if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                let v: f64 = text.parse().map_err(|_| SyntaxError {
                    line: span.line,
                    col: span.col,
                    message: format!("malformed number `{text}`"),
                })?;
                out.push((Tok::Num(v), span));
            } else if c.is_ascii_alphabetic() || c == '_' {
                let start = self.pos;
                while self.pos < self.src.len() {
                    let d = self.src[self.pos] as char;
                    if d.is_ascii_alphanumeric() || d == '_' {
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                out.push((Tok::Ident(text.to_string()), span));
            } else if "+-*/^(),[]=".contains(c) {
                out.push((Tok::Sym(c), span));
                self.pos += 1;
            } else {
                return Err(SyntaxError {
                    line: span.line,
                    col: span.col,
                    message: format!("unexpected character `{c}`"),
                });
            }
        }
        Ok(out)
    }
}

/// Token stream shared by the expression parser and the metric-file parser.
pub(crate) struct TokenStream {
    toks: Vec<(Tok, Span)>,
    pos: usize,
    end: Span,
}

impl TokenStream {
    /// Tokenizes `text` which starts at `line`, column `col0 + 1`.
    pub(crate) fn new(text: &str, line: usize, col0: usize) -> Result<Self, SyntaxError> {
        let toks = Lexer {
            src: text.as_bytes(),
            pos: 0,
            line,
            col0,
        }
        .tokens()?;
        Ok(Self {
            toks,
            pos: 0,
            end: Span {
                line,
                col: col0 + text.len() + 1,
            },
        })
    }

    /// Tokenizes several source lines as one stream; each entry is
    /// `(line_number, text)`.
    pub(crate) fn from_lines(lines: &[(usize, &str)]) -> Result<Self, SyntaxError> {
        let mut toks = Vec::new();
        let mut end = Span::default();
        for (line, text) in lines {
            toks.extend(
                Lexer {
                    src: text.as_bytes(),
                    pos: 0,
                    line: *line,
                    col0: 0,
                }
                .tokens()?,
            );
            end = Span {
                line: *line,
                col: text.len() + 1,
            };
        }
        Ok(Self { toks, pos: 0, end })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    pub(crate) fn span(&self) -> Span {
        self.toks.get(self.pos).map(|t| t.1).unwrap_or(self.end)
    }

    pub(crate) fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    pub(crate) fn error(&self, message: impl Into<String>) -> SyntaxError {
        let s = self.span();
        SyntaxError {
            line: s.line,
            col: s.col,
            message: message.into(),
        }
    }

    pub(crate) fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    pub(crate) fn expect(&mut self, c: char) -> Result<(), SyntaxError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(format!("expected `{c}`")))
        }
    }

    pub(crate) fn peek_sym(&self, c: char) -> bool {
        self.peek() == Some(&Tok::Sym(c))
    }

    pub(crate) fn ident(&mut self) -> Result<String, SyntaxError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.error("expected identifier")),
        }
    }

    pub(crate) fn number(&mut self) -> Result<f64, SyntaxError> {
        let neg = self.eat('-');
        match self.peek() {
            Some(Tok::Num(v)) => {
                let v = *v;
                self.pos += 1;
                Ok(if neg { -v } else { v })
            }
            _ => Err(self.error("expected number")),
        }
    }

    pub(crate) fn expr(&mut self) -> Result<Expr, SyntaxError> {
        let mut lhs = self.term()?;
        loop {
            let span = self.span();
            let op = if self.eat('+') {
                BinOp::Add
            } else if self.eat('-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Expr {
                kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)),
                span,
            };
        }
    }

    fn term(&mut self) -> Result<Expr, SyntaxError> {
        let mut lhs = self.unary()?;
        loop {
            let span = self.span();
            let op = if self.eat('*') {
                BinOp::Mul
            } else if self.eat('/') {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Expr {
                kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)),
                span,
            };
        }
    }

    fn unary(&mut self) -> Result<Expr, SyntaxError> {
        let span = self.span();
        if self.eat('-') {
            let inner = self.unary()?;
            // A bare literal folds into a negative number so that rendered
            // negative constants reparse to the same tree.
            if let ExprKind::Num(v) = inner.kind {
                return Ok(Expr {
                    kind: ExprKind::Num(-v),
                    span,
                });
            }
            return Ok(Expr {
                kind: ExprKind::Neg(Box::new(inner)),
                span,
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, SyntaxError> {
        let base = self.primary()?;
        let span = self.span();
        if self.eat('^') {
            let exp = self.unary()?;
            return Ok(Expr {
                kind: ExprKind::Binary(BinOp::Pow, Box::new(base), Box::new(exp)),
                span,
            });
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, SyntaxError> {
        let span = self.span();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr {
                    kind: ExprKind::Num(v),
                    span,
                })
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.eat('(') {
                    let func = Func::from_name(&name).ok_or_else(|| SyntaxError {
                        line: span.line,
                        col: span.col,
                        message: format!("unknown function `{name}`"),
                    })?;
                    let arg = self.expr()?;
                    self.expect(')')?;
                    Ok(Expr {
                        kind: ExprKind::Call(func, Box::new(arg)),
                        span,
                    })
                } else {
                    Ok(Expr {
                        kind: ExprKind::Ident(name),
                        span,
                    })
                }
            }
            Some(Tok::Sym('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            _ => Err(self.error("expected expression")),
        }
    }
}

/// Parses a complete expression.
pub fn parse_expr(text: &str) -> Result<Expr, SyntaxError> {
    let mut ts = TokenStream::new(text, 1, 0)?;
    let e = ts.expr()?;
    if !ts.at_end() {
        return Err(ts.error("trailing input"));
    }
    Ok(e)
}

/// Symbol bindings for evaluation: coordinates are seeded as jet variables,
/// named constants are plain numbers, scalars are expressions evaluated on
/// demand.
#[derive(Debug, Clone, Default)]
pub struct Bindings<'a> {
    pub coords: &'a [String],
    pub constants: Option<&'a HashMap<String, f64>>,
    pub scalars: Option<&'a [(String, Expr)]>,
}

pub fn builtin_constant(name: &str) -> Option<f64> {
    match name {
        "pi" => Some(std::f64::consts::PI),
        "e" => Some(std::f64::consts::E),
        _ => None,
    }
}

/// Evaluates `expr` as a third-order jet at `point` (one entry per coordinate).
pub fn jet_eval(expr: &Expr, bindings: &Bindings<'_>, point: &[f64]) -> Result<Jet3, JetError> {
    let mut cache = HashMap::new();
    eval_inner(expr, bindings, point, &mut cache, 0)
}

fn eval_inner(
    expr: &Expr,
    b: &Bindings<'_>,
    point: &[f64],
    cache: &mut HashMap<String, Jet3>,
    depth: usize,
) -> Result<Jet3, JetError> {
    let n = point.len();
    Ok(match &expr.kind {
        ExprKind::Num(v) => Jet3::constant(*v, n),
        ExprKind::Ident(name) => {
            if let Some(i) = b.coords.iter().position(|c| c == name) {
                Jet3::variable(point[i], i, n)
            } else if let Some(v) = b.constants.and_then(|c| c.get(name)) {
                Jet3::constant(*v, n)
            } else if let Some(j) = cache.get(name) {
                j.clone()
            } else if let Some((_, e)) =
                b.scalars.and_then(|s| s.iter().find(|(s_name, _)| s_name == name))
            {
                if depth > 64 {
                    return Err(JetError::UnknownSymbol(format!("{name} (cyclic definition)")));
                }
                let j = eval_inner(e, b, point, cache, depth + 1)?;
                cache.insert(name.clone(), j.clone());
                j
            } else if let Some(v) = builtin_constant(name) {
                Jet3::constant(v, n)
            } else {
                return Err(JetError::UnknownSymbol(name.clone()));
            }
        }
        ExprKind::Neg(a) => -eval_inner(a, b, point, cache, depth)?,
        ExprKind::Call(f, a) => {
            let x = eval_inner(a, b, point, cache, depth)?;
            match f {
                Func::Exp => x.exp(),
                Func::Log => x.ln()?,
                Func::Sqrt => x.sqrt()?,
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
                Func::Tan => x.tan()?,
                Func::Sinh => x.sinh(),
                Func::Cosh => x.cosh(),
            }
        }
        ExprKind::Binary(op, l, r) => {
            let x = eval_inner(l, b, point, cache, depth)?;
            let y = eval_inner(r, b, point, cache, depth)?;
            match op {
                BinOp::Add => &x + &y,
                BinOp::Sub => &x - &y,
                BinOp::Mul => &x * &y,
                BinOp::Div => x.div_jet(&y)?,
                BinOp::Pow => {
                    if !y.is_constant() {
                        // Variable exponents go through exp(y log x).
                        (&y * &x.ln()?).exp()
                    } else {
                        x.powf(y.value())?
                    }
                }
            }
        }
    })
}

/// Plain value evaluation (no derivatives).
pub fn value_eval(expr: &Expr, bindings: &Bindings<'_>, point: &[f64]) -> Result<f64, JetError> {
    jet_eval(expr, bindings, point).map(|j| j.value())
}
