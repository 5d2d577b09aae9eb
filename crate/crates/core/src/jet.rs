//! Truncated third-order Taylor jets in several variables.
//!
//! A [`Jet3`] carries the value of a scalar together with all of its partial
//! derivatives up to order three at a fixed point. Arithmetic propagates those
//! derivatives exactly (Leibniz and Faà di Bruno rules), so composite
//! expressions are differentiated to machine precision without any step size.
//!
//! Second and third derivatives are stored symmetric-reduced: `hess` keeps the
//! entries `i <= j` and `third` the entries `i <= j <= k`, packed in
//! combinatorial order.

use std::ops::{Add, Div, Mul, Neg, Sub};

use thiserror::Error;

/// Smallest divisor magnitude accepted by [`Jet3::recip`].
pub const DIVISION_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JetError {
    #[error("division by a value too close to zero ({value:e})")]
    DivisionNearZero { value: f64 },
    #[error("{op} is undefined at {value}")]
    Domain { op: &'static str, value: f64 },
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("jet dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
}

/// Packed index of the symmetric pair `(i, j)`.
#[inline]
pub fn pair_index(i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    b * (b + 1) / 2 + a
}

/// Packed index of the symmetric triple `(i, j, k)`.
#[inline]
pub fn triple_index(i: usize, j: usize, k: usize) -> usize {
    let mut t = [i, j, k];
    t.sort_unstable();
    let [a, b, c] = t;
    c * (c + 1) * (c + 2) / 6 + b * (b + 1) / 2 + a
}

#[inline]
pub fn pair_count(n: usize) -> usize {
    n * (n + 1) / 2
}

#[inline]
pub fn triple_count(n: usize) -> usize {
    n * (n + 1) * (n + 2) / 6
}

#[derive(Debug, Clone, PartialEq)]
pub struct Jet3 {
    dim: usize,
    value: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
    third: Vec<f64>,
}

impl Jet3 {
    pub fn constant(value: f64, dim: usize) -> Self {
        Self {
            dim,
            value,
            grad: vec![0.0; dim],
            hess: vec![0.0; pair_count(dim)],
            third: vec![0.0; triple_count(dim)],
        }
    }

    /// The coordinate function `x_i` evaluated at `value`.
    pub fn variable(value: f64, i: usize, dim: usize) -> Self {
        assert!(i < dim, "variable index {i} out of range for dimension {dim}");
        let mut jet = Self::constant(value, dim);
        jet.grad[i] = 1.0;
        jet
    }

    /// Builds a jet from explicit coefficients. `hess` and `third` must be in
    /// packed order (see [`pair_index`] and [`triple_index`]).
    pub fn from_parts(value: f64, grad: Vec<f64>, hess: Vec<f64>, third: Vec<f64>) -> Self {
        let dim = grad.len();
        assert_eq!(hess.len(), pair_count(dim));
        assert_eq!(third.len(), triple_count(dim));
        Self {
            dim,
            value,
            grad,
            hess,
            third,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn d1(&self, i: usize) -> f64 {
        self.grad[i]
    }

    pub fn d2(&self, i: usize, j: usize) -> f64 {
        self.hess[pair_index(i, j)]
    }

    pub fn d3(&self, i: usize, j: usize, k: usize) -> f64 {
        self.third[triple_index(i, j, k)]
    }

    pub fn hess_packed(&self) -> &[f64] {
        &self.hess
    }

    pub fn third_packed(&self) -> &[f64] {
        &self.third
    }

    /// Dense symmetric Hessian.
    pub fn hess_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.d2(i, j)).collect())
            .collect()
    }

    /// Maximum absolute coefficient over all orders.
    pub fn max_abs(&self) -> f64 {
        std::iter::once(self.value)
            .chain(self.grad.iter().copied())
            .chain(self.hess.iter().copied())
            .chain(self.third.iter().copied())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// True when every derivative part vanishes.
    pub fn is_constant(&self) -> bool {
        self.grad.iter().all(|v| *v == 0.0)
            && self.hess.iter().all(|v| *v == 0.0)
            && self.third.iter().all(|v| *v == 0.0)
    }

    fn check_dim(&self, other: &Self) {
        assert_eq!(
            self.dim, other.dim,
            "jet dimensions differ ({} vs {})",
            self.dim, other.dim
        );
    }

    /// Applies a scalar function given its value and first three derivatives
    /// at `self.value()`.
    pub fn compose(&self, h: [f64; 4]) -> Self {
        let n = self.dim;
        let [h0, h1, h2, h3] = h;
        let f = self;
        let mut out = Self::constant(h0, n);
        for i in 0..n {
            out.grad[i] = h1 * f.grad[i];
        }
        let mut p = 0;
        for j in 0..n {
            for i in 0..=j {
                out.hess[p] = h2 * f.grad[i] * f.grad[j] + h1 * f.hess[p];
                p += 1;
            }
        }
        let mut t = 0;
        for k in 0..n {
            for j in 0..=k {
                for i in 0..=j {
                    let (gi, gj, gk) = (f.grad[i], f.grad[j], f.grad[k]);
                    let hij = f.hess[pair_index(i, j)];
                    let hik = f.hess[pair_index(i, k)];
                    let hjk = f.hess[pair_index(j, k)];
                    out.third[t] = h3 * gi * gj * gk
                        + h2 * (hij * gk + hik * gj + hjk * gi)
                        + h1 * f.third[t];
                    t += 1;
                }
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            value: self.value * s,
            grad: self.grad.iter().map(|v| v * s).collect(),
            hess: self.hess.iter().map(|v| v * s).collect(),
            third: self.third.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add_scalar(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.value += s;
        out
    }

    fn zip_with(&self, other: &Self, op: impl Fn(f64, f64) -> f64) -> Self {
        self.check_dim(other);
        Self {
            dim: self.dim,
            value: op(self.value, other.value),
            grad: self.grad.iter().zip(&other.grad).map(|(a, b)| op(*a, *b)).collect(),
            hess: self.hess.iter().zip(&other.hess).map(|(a, b)| op(*a, *b)).collect(),
            third: self.third.iter().zip(&other.third).map(|(a, b)| op(*a, *b)).collect(),
        }
    }

    pub fn mul_jet(&self, other: &Self) -> Self {
        self.check_dim(other);
        let n = self.dim;
        let (f, g) = (self, other);
        let mut out = Self::constant(f.value * g.value, n);
        for i in 0..n {
            out.grad[i] = f.grad[i] * g.value + f.value * g.grad[i];
        }
        let mut p = 0;
        for j in 0..n {
            for i in 0..=j {
                out.hess[p] = f.hess[p] * g.value
                    + f.grad[i] * g.grad[j]
                    + f.grad[j] * g.grad[i]
                    + f.value * g.hess[p];
                p += 1;
            }
        }
        let mut t = 0;
        for k in 0..n {
            for j in 0..=k {
                let pjk = pair_index(j, k);
                for i in 0..=j {
                    let pij = pair_index(i, j);
                    let pik = pair_index(i, k);
                    out.third[t] = f.third[t] * g.value
                        + f.value * g.third[t]
                        + f.hess[pij] * g.grad[k]
                        + f.hess[pik] * g.grad[j]
                        + f.hess[pjk] * g.grad[i]
                        + f.grad[i] * g.hess[pjk]
                        + f.grad[j] * g.hess[pik]
                        + f.grad[k] * g.hess[pij];
                    t += 1;
                }
            }
        }
        out
    }

    /// Reciprocal through the truncated series of `1/x`.
    pub fn recip(&self) -> Result<Self, JetError> {
        let x = self.value;
        if x.abs() < DIVISION_FLOOR {
            return Err(JetError::DivisionNearZero { value: x });
        }
        let r = 1.0 / x;
        let r2 = r * r;
        Ok(self.compose([r, -r2, 2.0 * r2 * r, -6.0 * r2 * r2]))
    }

    pub fn div_jet(&self, other: &Self) -> Result<Self, JetError> {
        Ok(self.mul_jet(&other.recip()?))
    }

    pub fn exp(&self) -> Self {
        let e = self.value.exp();
        self.compose([e, e, e, e])
    }

    pub fn ln(&self) -> Result<Self, JetError> {
        let x = self.value;
        if !(x > 0.0) {
            return Err(JetError::Domain { op: "log", value: x });
        }
        let r = 1.0 / x;
        Ok(self.compose([x.ln(), r, -r * r, 2.0 * r * r * r]))
    }

    pub fn sqrt(&self) -> Result<Self, JetError> {
        let x = self.value;
        if !(x > 0.0) {
            return Err(JetError::Domain { op: "sqrt", value: x });
        }
        let s = x.sqrt();
        Ok(self.compose([s, 0.5 / s, -0.25 / (s * x), 0.375 / (s * x * x)]))
    }

    pub fn sin(&self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.compose([s, c, -s, -c])
    }

    pub fn cos(&self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.compose([c, -s, -c, s])
    }

    pub fn tan(&self) -> Result<Self, JetError> {
        let c = self.value.cos();
        if c.abs() < DIVISION_FLOOR {
            return Err(JetError::Domain { op: "tan", value: self.value });
        }
        let t = self.value.tan();
        let sec2 = 1.0 + t * t;
        Ok(self.compose([t, sec2, 2.0 * t * sec2, 2.0 * sec2 * (1.0 + 3.0 * t * t)]))
    }

    pub fn sinh(&self) -> Self {
        let (s, c) = (self.value.sinh(), self.value.cosh());
        self.compose([s, c, s, c])
    }

    pub fn cosh(&self) -> Self {
        let (s, c) = (self.value.sinh(), self.value.cosh());
        self.compose([c, s, c, s])
    }

    /// `self^p` for a constant exponent. Integer exponents accept any base;
    /// fractional exponents need a positive base.
    pub fn powf(&self, p: f64) -> Result<Self, JetError> {
        let x = self.value;
        if p == 0.0 {
            return Ok(Self::constant(1.0, self.dim));
        }
        let integral = p.fract() == 0.0 && p.abs() < i32::MAX as f64;
        if integral {
            let k = p as i32;
            if k < 0 && x.abs() < DIVISION_FLOOR {
                return Err(JetError::DivisionNearZero { value: x });
            }
            let term = |c: f64, e: i32| if c == 0.0 { 0.0 } else { c * x.powi(e) };
            let h = [
                x.powi(k),
                term(p, k - 1),
                term(p * (p - 1.0), k - 2),
                term(p * (p - 1.0) * (p - 2.0), k - 3),
            ];
            return Ok(self.compose(h));
        }
        if !(x > 0.0) {
            return Err(JetError::Domain { op: "pow", value: x });
        }
        Ok(self.compose([
            x.powf(p),
            p * x.powf(p - 1.0),
            p * (p - 1.0) * x.powf(p - 2.0),
            p * (p - 1.0) * (p - 2.0) * x.powf(p - 3.0),
        ]))
    }

    /// Value of the truncated Taylor polynomial at `self.point + delta`.
    pub fn taylor_eval(&self, delta: &[f64]) -> f64 {
        let n = self.dim;
        let mut s = self.value;
        for i in 0..n {
            s += self.grad[i] * delta[i];
        }
        for i in 0..n {
            for j in 0..n {
                s += 0.5 * self.d2(i, j) * delta[i] * delta[j];
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    s += self.d3(i, j, k) * delta[i] * delta[j] * delta[k] / 6.0;
                }
            }
        }
        s
    }
}

impl Add for &Jet3 {
    type Output = Jet3;
    fn add(self, rhs: &Jet3) -> Jet3 {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &Jet3 {
    type Output = Jet3;
    fn sub(self, rhs: &Jet3) -> Jet3 {
        self.zip_with(rhs, |a, b| a - b)
    }
}

impl Mul for &Jet3 {
    type Output = Jet3;
    fn mul(self, rhs: &Jet3) -> Jet3 {
        self.mul_jet(rhs)
    }
}

impl Div for &Jet3 {
    type Output = Result<Jet3, JetError>;
    fn div(self, rhs: &Jet3) -> Result<Jet3, JetError> {
        self.div_jet(rhs)
    }
}

impl Neg for &Jet3 {
    type Output = Jet3;
    fn neg(self) -> Jet3 {
        self.scale(-1.0)
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident, $out:ty) => {
        impl $tr for Jet3 {
            type Output = $out;
            fn $m(self, rhs: Jet3) -> $out {
                (&self).$m(&rhs)
            }
        }
    };
}

forward_owned!(Add, add, Jet3);
forward_owned!(Sub, sub, Jet3);
forward_owned!(Mul, mul, Jet3);
forward_owned!(Div, div, Result<Jet3, JetError>);

impl Neg for Jet3 {
    type Output = Jet3;
    fn neg(self) -> Jet3 {
        -&self
    }
}
