//! `.metric` files: parsing, rendering and jet evaluation of metric components.
//!
//! ```text
//! # round 2-sphere
//! name sphere2
//! coords th ph
//! domain th in (0.3, 2.8)
//! g = [[1, 0],
//!      [sin(th)^2]]
//! ```
//!
//! Rows of the matrix literal either list all `n` entries or only the upper
//! triangle starting at the diagonal. Single components may also be set with
//! `g[i][j] = expr` (zero-based); unspecified components are zero.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::expr::{builtin_constant, value_eval, Bindings, Expr, Func, Span, SyntaxError, TokenStream};
use crate::jet::{Jet3, JetError};

pub const MIN_DIM: usize = 2;
pub const MAX_DIM: usize = 8;
/// Smallest accepted eigenvalue of `g`, relative to the largest.
pub const PD_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("parse error at {line}:{col}: {message}")]
    Parse {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("g[{i}][{j}] and g[{j}][{i}] differ (line {line})")]
    Symmetry { i: usize, j: usize, line: usize },
    #[error("matrix shape error: {0}")]
    Arity(String),
    #[error("metric is not positive definite (eigenvalues in [{min:e}, {max:e}])")]
    NotPositiveDefinite { min: f64, max: f64 },
    #[error("coordinate {coord} = {value} lies outside its domain ({lo}, {hi})")]
    OutOfDomain {
        coord: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("expected a point with {expected} coordinates, got {got}")]
    PointArity { expected: usize, got: usize },
    #[error(transparent)]
    Eval(#[from] JetError),
}

impl From<SyntaxError> for MetricError {
    fn from(e: SyntaxError) -> Self {
        MetricError::Parse {
            line: e.line,
            col: e.col,
            message: e.message,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainHint {
    pub lo: Expr,
    pub hi: Expr,
    pub lo_value: f64,
    pub hi_value: f64,
}

/// A chart together with the matrix of metric components.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricDefinition {
    pub name: String,
    pub coords: Vec<String>,
    pub constants: Vec<(String, Expr)>,
    pub constant_values: HashMap<String, f64>,
    pub domain: Vec<Option<DomainHint>>,
    pub scalars: Vec<(String, Expr)>,
    /// Full `n x n` matrix; the lower triangle mirrors the upper one.
    pub entries: Vec<Vec<Expr>>,
}

fn parse_err(line: usize, col: usize, message: impl Into<String>) -> MetricError {
    MetricError::Parse {
        line,
        col,
        message: message.into(),
    }
}

fn reserved(name: &str) -> bool {
    Func::from_name(name).is_some() || builtin_constant(name).is_some()
}

struct Builder {
    name: Option<String>,
    coords: Option<(usize, Vec<String>)>,
    constants: Vec<(String, Expr)>,
    constant_values: HashMap<String, f64>,
    domain: Vec<(usize, String, DomainHint)>,
    scalars: Vec<(String, Expr)>,
    // (i, j) -> (expr, line)
    components: HashMap<(usize, usize), (Expr, usize)>,
    matrix_seen: bool,
}

impl Builder {
    fn declared(&self, name: &str) -> bool {
        self.coords.as_ref().is_some_and(|(_, c)| c.iter().any(|x| x == name))
            || self.constant_values.contains_key(name)
            || self.scalars.iter().any(|(s, _)| s == name)
    }

    fn constant_value(&self, e: &Expr, line: usize) -> Result<f64, MetricError> {
        let b = Bindings {
            coords: &[],
            constants: Some(&self.constant_values),
            scalars: None,
        };
        value_eval(e, &b, &[]).map_err(|err| match err {
            JetError::UnknownSymbol(s) => parse_err(line, e.span.col, format!("`{s}` is not a constant")),
            other => parse_err(line, e.span.col, other.to_string()),
        })
    }

    fn coord_count(&self, line: usize) -> Result<usize, MetricError> {
        self.coords
            .as_ref()
            .map(|(_, c)| c.len())
            .ok_or_else(|| parse_err(line, 1, "`coords` must precede this line"))
    }

    fn set_component(&mut self, i: usize, j: usize, e: Expr, line: usize) -> Result<(), MetricError> {
        if let Some((_, prev_line)) = self.components.get(&(i, j)) {
            return Err(parse_err(
                line,
                1,
                format!("g[{i}][{j}] already given on line {prev_line}"),
            ));
        }
        if i != j {
            if let Some((other, _)) = self.components.get(&(j, i)) {
                if other.folded() != e.folded() {
                    return Err(MetricError::Symmetry {
                        i: i.min(j),
                        j: i.max(j),
                        line,
                    });
                }
            }
        }
        self.components.insert((i, j), (e, line));
        Ok(())
    }
}

/// Parses a `.metric` document.
pub fn parse_metric(text: &str) -> Result<MetricDefinition, MetricError> {
    let mut b = Builder {
        name: None,
        coords: None,
        constants: Vec::new(),
        constant_values: HashMap::new(),
        domain: Vec::new(),
        scalars: Vec::new(),
        components: HashMap::new(),
        matrix_seen: false,
    };
    let lines: Vec<(usize, &str)> = text.lines().enumerate().map(|(i, l)| (i + 1, l)).collect();
    let mut idx = 0;
    while idx < lines.len() {
        let (line_no, raw) = lines[idx];
        idx += 1;
        let line = strip_comment(raw);
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let indent = line.len() - line.trim_start().len();
        let (keyword, rest) = match trimmed.find(|c: char| c.is_whitespace() || c == '=' || c == '[') {
            Some(p) => (&trimmed[..p], &trimmed[p..]),
            None => (trimmed, ""),
        };
        let rest_col = indent + keyword.len();
        match keyword {
            "name" => {
                let n = rest.trim();
                if n.is_empty() || n.contains(char::is_whitespace) {
                    return Err(parse_err(line_no, rest_col + 1, "expected a single name"));
                }
                b.name = Some(n.to_string());
            }
            "coords" => {
                if b.coords.is_some() {
                    return Err(parse_err(line_no, 1, "duplicate `coords`"));
                }
                let names: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
                if names.len() < MIN_DIM || names.len() > MAX_DIM {
                    return Err(MetricError::Arity(format!(
                        "{} coordinates declared, expected {MIN_DIM}..={MAX_DIM}",
                        names.len()
                    )));
                }
                for (k, nm) in names.iter().enumerate() {
                    let valid = nm.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
                        && nm.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
                    if !valid || reserved(nm) {
                        return Err(parse_err(line_no, rest_col + 1, format!("invalid coordinate name `{nm}`")));
                    }
                    if names[..k].contains(nm) {
                        return Err(parse_err(line_no, rest_col + 1, format!("duplicate coordinate `{nm}`")));
                    }
                }
                b.coords = Some((line_no, names));
            }
            "const" | "scalar" => {
                let mut ts = TokenStream::new(rest, line_no, rest_col)?;
                let name = ts.ident()?;
                if reserved(&name) || b.declared(&name) {
                    return Err(parse_err(line_no, rest_col + 1, format!("`{name}` is already defined")));
                }
                ts.expect('=')?;
                let e = ts.expr()?;
                if !ts.at_end() {
                    return Err(ts.error("trailing input").into());
                }
                if keyword == "const" {
                    let v = b.constant_value(&e, line_no)?;
                    b.constant_values.insert(name.clone(), v);
                    b.constants.push((name, e));
                } else {
                    b.scalars.push((name, e));
                }
            }
            "domain" => {
                let mut ts = TokenStream::new(rest, line_no, rest_col)?;
                let coord = ts.ident()?;
                let kw = ts.ident()?;
                if kw != "in" {
                    return Err(parse_err(line_no, rest_col + 1, "expected `in`"));
                }
                ts.expect('(')?;
                let lo = ts.expr()?;
                ts.expect(',')?;
                let hi = ts.expr()?;
                ts.expect(')')?;
                if !ts.at_end() {
                    return Err(ts.error("trailing input").into());
                }
                let lo_value = b.constant_value(&lo, line_no)?;
                let hi_value = b.constant_value(&hi, line_no)?;
                if !(lo_value < hi_value) {
                    return Err(parse_err(line_no, rest_col + 1, "empty domain interval"));
                }
                b.domain.push((
                    line_no,
                    coord,
                    DomainHint {
                        lo,
                        hi,
                        lo_value,
                        hi_value,
                    },
                ));
            }
            "g" => {
                let n = b.coord_count(line_no)?;
                if rest.trim_start().starts_with('[') {
                    let mut ts = TokenStream::new(rest, line_no, rest_col)?;
                    ts.expect('[')?;
                    let i = index_literal(&mut ts, n)?;
                    ts.expect(']')?;
                    ts.expect('[')?;
                    let j = index_literal(&mut ts, n)?;
                    ts.expect(']')?;
                    ts.expect('=')?;
                    let e = ts.expr()?;
                    if !ts.at_end() {
                        return Err(ts.error("trailing input").into());
                    }
                    b.set_component(i, j, e, line_no)?;
                    continue;
                }
                if b.matrix_seen {
                    return Err(parse_err(line_no, 1, "duplicate matrix literal"));
                }
                b.matrix_seen = true;
                // Gather lines until the brackets balance.
                let mut chunk: Vec<(usize, String)> = vec![(line_no, format!("{:width$}{}", "", rest, width = rest_col))];
                let mut depth = bracket_depth(rest);
                while depth > 0 && idx < lines.len() {
                    let (ln, raw) = lines[idx];
                    idx += 1;
                    let l = strip_comment(raw).to_string();
                    depth += bracket_depth(&l);
                    chunk.push((ln, l));
                }
                if depth != 0 {
                    return Err(parse_err(line_no, rest_col + 1, "unbalanced brackets in matrix literal"));
                }
                let refs: Vec<(usize, &str)> = chunk.iter().map(|(l, s)| (*l, s.as_str())).collect();
                let mut ts = TokenStream::from_lines(&refs)?;
                ts.expect('=')?;
                let rows = matrix_literal(&mut ts)?;
                if !ts.at_end() {
                    return Err(ts.error("trailing input").into());
                }
                if rows.len() != n {
                    return Err(MetricError::Arity(format!("{} rows for {n} coordinates", rows.len())));
                }
                for (i, row) in rows.into_iter().enumerate() {
                    let offset = if row.len() == n {
                        0
                    } else if row.len() == n - i {
                        i
                    } else {
                        return Err(MetricError::Arity(format!(
                            "row {i} has {} entries, expected {n} or {}",
                            row.len(),
                            n - i
                        )));
                    };
                    for (c, e) in row.into_iter().enumerate() {
                        let line = e.span.line;
                        b.set_component(i, c + offset, e, line)?;
                    }
                }
            }
            other => {
                return Err(parse_err(line_no, indent + 1, format!("unknown section `{other}`")));
            }
        }
    }

    let (_, coords) = b.coords.take().ok_or_else(|| parse_err(1, 1, "missing `coords`"))?;
    let n = coords.len();
    if b.components.is_empty() {
        return Err(parse_err(lines.len().max(1), 1, "missing metric components `g`"));
    }
    let mut domain = vec![None; n];
    for (line, name, hint) in b.domain {
        let i = coords
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| parse_err(line, 1, format!("domain for unknown coordinate `{name}`")))?;
        domain[i] = Some(hint);
    }
    let mut entries = vec![vec![Expr::num(0.0); n]; n];
    for i in 0..n {
        for j in i..n {
            let e = b
                .components
                .get(&(i, j))
                .or_else(|| b.components.get(&(j, i)))
                .map(|(e, _)| e.clone())
                .unwrap_or_else(|| Expr::num(0.0));
            entries[i][j] = e.clone();
            entries[j][i] = e;
        }
    }
    let def = MetricDefinition {
        name: b.name.unwrap_or_else(|| "metric".to_string()),
        coords,
        constants: b.constants,
        constant_values: b.constant_values,
        domain,
        scalars: b.scalars,
        entries,
    };
    def.check_symbols()?;
    Ok(def)
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(p) => &line[..p],
        None => line,
    }
}

fn bracket_depth(s: &str) -> i64 {
    s.chars().fold(0, |d, c| match c {
        '[' => d + 1,
        ']' => d - 1,
        _ => d,
    })
}

fn index_literal(ts: &mut TokenStream, n: usize) -> Result<usize, MetricError> {
    let span = ts.span();
    let v = ts.number()?;
    if v < 0.0 || v.fract() != 0.0 || v as usize >= n {
        return Err(parse_err(span.line, span.col, format!("index {v} out of range 0..{n}")));
    }
    Ok(v as usize)
}

fn matrix_literal(ts: &mut TokenStream) -> Result<Vec<Vec<Expr>>, MetricError> {
    ts.expect('[')?;
    let mut rows = Vec::new();
    loop {
        ts.expect('[')?;
        let mut row = Vec::new();
        loop {
            let span = ts.span();
            let mut e = ts.expr()?;
            if e.span == Span::default() {
                e.span = span;
            }
            // Entries remember the line they start on.
            e.span.line = span.line;
            row.push(e);
            if ts.eat(',') {
                continue;
            }
            ts.expect(']')?;
            break;
        }
        rows.push(row);
        if ts.eat(',') {
            if ts.peek_sym(']') {
                ts.expect(']')?;
                break;
            }
            continue;
        }
        ts.expect(']')?;
        break;
    }
    Ok(rows)
}

impl MetricDefinition {
    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn bindings(&self) -> Bindings<'_> {
        Bindings {
            coords: &self.coords,
            constants: Some(&self.constant_values),
            scalars: Some(&self.scalars),
        }
    }

    fn check_symbols(&self) -> Result<(), MetricError> {
        let known = |name: &str, scalars_upto: usize| {
            self.coords.iter().any(|c| c == name)
                || self.constant_values.contains_key(name)
                || self.scalars[..scalars_upto].iter().any(|(s, _)| s == name)
                || builtin_constant(name).is_some()
        };
        for (k, (_, e)) in self.scalars.iter().enumerate() {
            for id in e.identifiers() {
                if !known(&id, k) {
                    return Err(unknown_symbol(e, &id));
                }
            }
        }
        for row in &self.entries {
            for e in row {
                for id in e.identifiers() {
                    if !known(&id, self.scalars.len()) {
                        return Err(unknown_symbol(e, &id));
                    }
                }
            }
        }
        Ok(())
    }

    /// Looks up a declared scalar field.
    pub fn scalar(&self, name: &str) -> Option<&Expr> {
        self.scalars.iter().find(|(s, _)| s == name).map(|(_, e)| e)
    }

    /// Sampling box: domain hints where declared, `(-1, 1)` elsewhere.
    pub fn sampling_box(&self) -> Vec<(f64, f64)> {
        self.domain
            .iter()
            .map(|h| h.as_ref().map_or((-1.0, 1.0), |h| (h.lo_value, h.hi_value)))
            .collect()
    }

    pub fn check_point(&self, point: &[f64]) -> Result<(), MetricError> {
        if point.len() != self.dim() {
            return Err(MetricError::PointArity {
                expected: self.dim(),
                got: point.len(),
            });
        }
        for (i, h) in self.domain.iter().enumerate() {
            if let Some(h) = h {
                if !(point[i] > h.lo_value && point[i] < h.hi_value) {
                    return Err(MetricError::OutOfDomain {
                        coord: self.coords[i].clone(),
                        value: point[i],
                        lo: h.lo_value,
                        hi: h.hi_value,
                    });
                }
            }
        }
        Ok(())
    }

    /// Evaluates a scalar expression (typically a declared scalar or a
    /// conformal factor) as a jet at `point`.
    pub fn eval_expr(&self, e: &Expr, point: &[f64]) -> Result<Jet3, MetricError> {
        Ok(crate::expr::jet_eval(e, &self.bindings(), point)?)
    }

    /// Metric component values at `q` (no derivatives).
    pub fn values_at(&self, q: &[f64]) -> Result<DMatrix<f64>, MetricError> {
        self.check_point(q)?;
        let b = self.bindings();
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = value_eval(&self.entries[i][j], &b, q)?;
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Ok(m)
    }

    /// Canonical text form; reparses to a structurally equal definition.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "name {}", self.name);
        let _ = writeln!(s, "coords {}", self.coords.join(" "));
        for (k, e) in &self.constants {
            let _ = writeln!(s, "const {k} = {e}");
        }
        for (i, h) in self.domain.iter().enumerate() {
            if let Some(h) = h {
                let _ = writeln!(s, "domain {} in ({}, {})", self.coords[i], h.lo, h.hi);
            }
        }
        for (k, e) in &self.scalars {
            let _ = writeln!(s, "scalar {k} = {e}");
        }
        let n = self.dim();
        s.push_str("g = [\n");
        for i in 0..n {
            let row: Vec<String> = (i..n).map(|j| self.entries[i][j].to_string()).collect();
            let sep = if i + 1 < n { "," } else { "" };
            let _ = writeln!(s, "  [{}]{sep}", row.join(", "));
        }
        s.push_str("]\n");
        s
    }

    /// Structural equality of the mathematical content (ignores spans).
    pub fn same_content(&self, other: &Self) -> bool {
        self.name == other.name
            && self.coords == other.coords
            && self.constants == other.constants
            && self.scalars == other.scalars
            && self.entries == other.entries
            && self.domain.len() == other.domain.len()
            && self
                .domain
                .iter()
                .zip(&other.domain)
                .all(|(a, b)| match (a, b) {
                    (None, None) => true,
                    (Some(a), Some(b)) => a.lo == b.lo && a.hi == b.hi,
                    _ => false,
                })
    }
}

fn unknown_symbol(e: &Expr, id: &str) -> MetricError {
    let span = find_ident_span(e, id).unwrap_or(e.span);
    parse_err(span.line, span.col, format!("unknown symbol `{id}`"))
}

fn find_ident_span(e: &Expr, id: &str) -> Option<Span> {
    use crate::expr::ExprKind;
    match &e.kind {
        ExprKind::Ident(n) if n == id => Some(e.span),
        ExprKind::Neg(a) | ExprKind::Call(_, a) => find_ident_span(a, id),
        ExprKind::Binary(_, a, b) => find_ident_span(a, id).or_else(|| find_ident_span(b, id)),
        _ => None,
    }
}

/// Metric components and inverse, as third-order jets at a point.
#[derive(Debug, Clone)]
pub struct MetricJet {
    pub point: Vec<f64>,
    pub g: Vec<Vec<Jet3>>,
    pub g_inv: DMatrix<f64>,
    pub g_inv_jets: Vec<Vec<Jet3>>,
}

impl MetricJet {
    pub fn dim(&self) -> usize {
        self.point.len()
    }

    pub fn g_values(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| self.g[i][j].value())
    }
}

/// Checks positive definiteness with the relative eigenvalue floor.
pub fn check_positive_definite(g: &DMatrix<f64>) -> Result<(), MetricError> {
    let eig = SymmetricEigen::new(g.clone());
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || !(min > PD_TOLERANCE * max) {
        return Err(MetricError::NotPositiveDefinite { min, max });
    }
    Ok(())
}

/// Evaluates all metric components as jets at `point` and propagates the
/// inverse through jet arithmetic.
pub fn evaluate_metric_jets(def: &MetricDefinition, point: &[f64]) -> Result<MetricJet, MetricError> {
    def.check_point(point)?;
    let n = def.dim();
    let bindings = def.bindings();
    let mut g: Vec<Vec<Jet3>> = vec![Vec::with_capacity(n); n];
    let mut upper = vec![vec![None; n]; n];
    for i in 0..n {
        for j in i..n {
            upper[i][j] = Some(crate::expr::jet_eval(&def.entries[i][j], &bindings, point)?);
        }
    }
    for (i, row) in g.iter_mut().enumerate() {
        for j in 0..n {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            row.push(upper[a][b].clone().unwrap());
        }
    }
    let g0 = DMatrix::from_fn(n, n, |i, j| g[i][j].value());
    check_positive_definite(&g0)?;
    let g_inv = g0
        .clone()
        .cholesky()
        .ok_or(MetricError::NotPositiveDefinite { min: 0.0, max: 0.0 })?
        .inverse();
    let g_inv_jets = invert_jet_matrix(&g, &g_inv);
    Ok(MetricJet {
        point: point.to_vec(),
        g,
        g_inv,
        g_inv_jets,
    })
}

/// Inverse of a jet matrix `G = G0 + D` (D without value part) as the
/// truncated Neumann series `(I - A + A^2 - A^3) G0^{-1}`, `A = G0^{-1} D`.
pub fn invert_jet_matrix(g: &[Vec<Jet3>], g0_inv: &DMatrix<f64>) -> Vec<Vec<Jet3>> {
    let n = g.len();
    let dim = g[0][0].dim();
    let d: Vec<Vec<Jet3>> = g
        .iter()
        .map(|row| row.iter().map(|j| j.add_scalar(-j.value())).collect())
        .collect();
    // A = G0^{-1} D
    let a: Vec<Vec<Jet3>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    (0..n).fold(Jet3::constant(0.0, dim), |acc, k| &acc + &d[k][j].scale(g0_inv[(i, k)]))
                })
                .collect()
        })
        .collect();
    let matmul = |x: &Vec<Vec<Jet3>>, y: &Vec<Vec<Jet3>>| -> Vec<Vec<Jet3>> {
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).fold(Jet3::constant(0.0, dim), |acc, k| &acc + &(&x[i][k] * &y[k][j])))
                    .collect()
            })
            .collect()
    };
    let a2 = matmul(&a, &a);
    let a3 = matmul(&a2, &a);
    // S = I - A + A^2 - A^3
    let s: Vec<Vec<Jet3>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let id = if i == j { 1.0 } else { 0.0 };
                    (&(&a2[i][j] - &a[i][j]) - &a3[i][j]).add_scalar(id)
                })
                .collect()
        })
        .collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).fold(Jet3::constant(0.0, dim), |acc, k| &acc + &s[i][k].scale(g0_inv[(k, j)])))
                .collect()
        })
        .collect()
}
