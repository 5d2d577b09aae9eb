//! Pointwise curvature pipeline.
//!
//! Conventions (all tensors in chart components, indices lowered):
//!
//! * `R(X,Y)Z = ∇_X ∇_Y Z - ∇_Y ∇_X Z - ∇_[X,Y] Z`, stored as
//!   `riemann[a][b][c][d] = g(R(∂_a, ∂_b)∂_c, ∂_d)`, so `R(X,Y,Y,X)` is the
//!   sectional curvature of an orthonormal pair.
//! * `Ric(Y,Z) = Σ_i R(E_i, Y, Z, E_i)`, positive on round spheres.
//! * `Ric° = Ric - (τ/n) g`, trace-free by construction.
//! * Schouten `h = (Ric - τ/(2(n-1)) g) / (n-2)`.
//! * Weyl `W = R + g ⋆ h`. With the fourth-slot lowering above this is the
//!   totally trace-free part of `R`; in the sectional-positive lowering
//!   `(X,Y,U,V) ↦ g(R(X,Y)V, U)` it reads `R - g ⋆ h`.
//! * Cotton `C(X,Y,Z) = (∇_X h)(Y,Z) - (∇_Y h)(X,Z)`.
//! * `δW(X,Y,Z) = Σ_i (∇_{E_i} W)(X,Y,Z,E_i)`, which satisfies `δW = (n-3) C`.
//!
//! Everything is assembled from the jet coefficients of `g` (up to third
//! derivatives); no finite differences are involved.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::metric::{evaluate_metric_jets, MetricDefinition, MetricError, MetricJet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CurvatureError {
    #[error("the Weyl tensor needs at least 3 dimensions, got {0}")]
    DimensionTooSmall(usize),
    #[error("tensor shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Dense tensor with all indices running over `0..n`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    n: usize,
    rank: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, rank: usize) -> Self {
        Tensor {
            n,
            rank,
            data: vec![0.0; n.pow(rank as u32)],
        }
    }

    pub fn from_fn(n: usize, rank: usize, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut t = Tensor::zeros(n, rank);
        let mut idx = vec![0usize; rank];
        for slot in t.data.iter_mut() {
            *slot = f(&idx);
            for k in (0..rank).rev() {
                idx[k] += 1;
                if idx[k] < n {
                    break;
                }
                idx[k] = 0;
            }
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.rank);
        idx.iter().fold(0, |acc, &i| acc * self.n + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    #[inline]
    pub fn at2(&self, a: usize, b: usize) -> f64 {
        self.data[a * self.n + b]
    }

    #[inline]
    pub fn at3(&self, a: usize, b: usize, c: usize) -> f64 {
        self.data[(a * self.n + b) * self.n + c]
    }

    #[inline]
    pub fn at4(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        self.data[((a * self.n + b) * self.n + c) * self.n + d]
    }

    #[inline]
    pub fn at5(&self, a: usize, b: usize, c: usize, d: usize, e: usize) -> f64 {
        self.data[(((a * self.n + b) * self.n + c) * self.n + d) * self.n + e]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest entry-wise difference.
    pub fn max_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn scaled(&self, s: f64) -> Tensor {
        Tensor {
            n: self.n,
            rank: self.rank,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        assert_eq!(self.rank, 2);
        DMatrix::from_row_slice(self.n, self.n, &self.data)
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Tensor {
        let n = m.nrows();
        Tensor::from_fn(n, 2, |i| m[(i[0], i[1])])
    }

    /// Components in the frame whose columns are `e`: `T(E_i, E_j, ...)`.
    pub fn in_frame(&self, e: &DMatrix<f64>) -> Tensor {
        let n = self.n;
        let mut cur = self.data.clone();
        // Contract one slot at a time; slot s is moved to the front and
        // transformed, which keeps the cost at n^(rank+1).
        for _ in 0..self.rank {
            let inner = n.pow(self.rank as u32 - 1);
            let mut next = vec![0.0; cur.len()];
            for a in 0..n {
                for rest in 0..inner {
                    let v = cur[a * inner + rest];
                    if v == 0.0 {
                        continue;
                    }
                    for i in 0..n {
                        // rotate: new layout puts the transformed index last
                        next[rest * n + i] += e[(a, i)] * v;
                    }
                }
            }
            cur = next;
        }
        Tensor {
            n,
            rank: self.rank,
            data: cur,
        }
    }
}

/// Kulkarni-Nomizu product
/// `(A⋆B)(X,Y,U,V) = A(X,U)B(Y,V) + A(Y,V)B(X,U) - A(X,V)B(Y,U) - A(Y,U)B(X,V)`.
pub fn kulkarni_nomizu(a: &Tensor, b: &Tensor) -> Result<Tensor, CurvatureError> {
    if a.rank != 2 || b.rank != 2 || a.n != b.n {
        return Err(CurvatureError::ShapeMismatch(format!(
            "expected two symmetric 2-tensors of equal size, got ranks {} and {}",
            a.rank, b.rank
        )));
    }
    Ok(Tensor::from_fn(a.n, 4, |i| {
        let (x, y, u, v) = (i[0], i[1], i[2], i[3]);
        a.at2(x, u) * b.at2(y, v) + a.at2(y, v) * b.at2(x, u) - a.at2(x, v) * b.at2(y, u) - a.at2(y, u) * b.at2(x, v)
    }))
}

/// `F_V(X,Y) = g(∇_X V, Y) + g(X,V) g(Y,V) - (div V + g(V,V)) g(X,Y) / n`.
///
/// `grad_v[a][b]` is the covariant derivative `(∇_a V)^b`.
pub fn f_v_tensor(g: &DMatrix<f64>, v: &[f64], grad_v: &DMatrix<f64>) -> Result<DMatrix<f64>, CurvatureError> {
    let n = g.nrows();
    if v.len() != n || grad_v.nrows() != n || grad_v.ncols() != n {
        return Err(CurvatureError::ShapeMismatch(format!(
            "metric is {n}x{n}, vector has {} components, gradient is {}x{}",
            v.len(),
            grad_v.nrows(),
            grad_v.ncols()
        )));
    }
    let v_low: Vec<f64> = (0..n).map(|a| (0..n).map(|b| g[(a, b)] * v[b]).sum()).collect();
    let div: f64 = (0..n).map(|a| grad_v[(a, a)]).sum();
    let vv: f64 = (0..n).map(|a| v[a] * v_low[a]).sum();
    Ok(DMatrix::from_fn(n, n, |a, b| {
        let nabla: f64 = (0..n).map(|c| grad_v[(a, c)] * g[(c, b)]).sum();
        nabla + v_low[a] * v_low[b] - (div + vv) * g[(a, b)] / n as f64
    }))
}

/// Covariant derivative `(∇_a V)^b = ∂_a V^b + Γ^b_{ac} V^c` from coordinate
/// derivatives `dv[a][b] = ∂_a V^b`.
pub fn covariant_vector_derivative(gamma: &Tensor, v: &[f64], dv: &DMatrix<f64>) -> DMatrix<f64> {
    let n = v.len();
    DMatrix::from_fn(n, n, |a, b| dv[(a, b)] + (0..n).map(|c| gamma.at3(b, a, c) * v[c]).sum::<f64>())
}

/// All pointwise curvature quantities at a chart point.
#[derive(Debug, Clone)]
pub struct CurvatureBundle {
    pub point: Vec<f64>,
    pub g: DMatrix<f64>,
    pub g_inv: DMatrix<f64>,
    /// `∂_e g_ab` at `[e][a][b]`.
    pub dg: Tensor,
    /// `Γ^a_bc` at `[a][b][c]`.
    pub gamma: Tensor,
    /// `∂_e Γ^a_bc` at `[e][a][b][c]`.
    pub gamma_d: Tensor,
    /// `∂_e ∂_f Γ^a_bc` at `[e][f][a][b][c]`.
    pub gamma_dd: Vec<f64>,
    pub riemann: Tensor,
    /// `∂_e R_abcd` at `[e][a][b][c][d]`.
    pub riemann_d: Tensor,
    pub ricci: Tensor,
    pub tau: f64,
    pub ricci_traceless: Tensor,
    pub schouten: Tensor,
    /// `(∇_e h)_ab` at `[e][a][b]`.
    pub schouten_grad: Tensor,
    pub cotton: Tensor,
    pub weyl: Tensor,
    /// Coordinate derivative `∂_e W_abcd` at `[e][a][b][c][d]`.
    pub weyl_d: Tensor,
    /// `(∇_e W)_abcd` at `[e][a][b][c][d]`.
    pub weyl_grad: Tensor,
    pub weyl_div: Tensor,
    /// Normalised scalar curvature `τ / (n(n-1))`.
    pub rho: f64,
}

impl CurvatureBundle {
    pub fn dim(&self) -> usize {
        self.point.len()
    }

    /// `(1,3)` Weyl tensor `W^d_abc = g^{de} W_abce` at `[a][b][c][d]`.
    pub fn weyl_raised(&self) -> Tensor {
        let n = self.dim();
        Tensor::from_fn(n, 4, |i| {
            (0..n)
                .map(|e| self.g_inv[(i[3], e)] * self.weyl.at4(i[0], i[1], i[2], e))
                .sum()
        })
    }

    /// `W(·,·,·,X)` as a 3-tensor (insertion into the last slot).
    pub fn weyl_insert_last(&self, x: &[f64]) -> Tensor {
        let n = self.dim();
        Tensor::from_fn(n, 3, |i| (0..n).map(|d| self.weyl.at4(i[0], i[1], i[2], d) * x[d]).sum())
    }

    /// `X ⌟ W = W(X,·,·,·)`.
    pub fn weyl_insert_first(&self, x: &[f64]) -> Tensor {
        let n = self.dim();
        Tensor::from_fn(n, 3, |i| (0..n).map(|a| self.weyl.at4(a, i[0], i[1], i[2]) * x[a]).sum())
    }

    /// Scale for relative comparisons: the largest Riemann component in a
    /// g-orthonormal frame (cheap upper bound by the chart components
    /// weighted with `|g^-1|`).
    pub fn curvature_scale(&self) -> f64 {
        match crate::linalg::orthonormal_frame(&self.g) {
            Some(e) => self.riemann.in_frame(&e).max_abs(),
            None => self.riemann.max_abs(),
        }
    }
}

/// Evaluates the metric jets and the full curvature bundle at `point`.
pub fn bundle_at(def: &MetricDefinition, point: &[f64]) -> Result<CurvatureBundle, CurvatureError> {
    let mj = evaluate_metric_jets(def, point)?;
    curvature_bundle(&mj)
}

pub fn curvature_bundle(mj: &MetricJet) -> Result<CurvatureBundle, CurvatureError> {
    let n = mj.dim();
    if n < 3 {
        return Err(CurvatureError::DimensionTooSmall(n));
    }
    let n2 = n * n;
    let n3 = n2 * n;
    let nf = n as f64;

    let g = mj.g_values();
    let g_inv = mj.g_inv.clone();
    // Metric derivatives.
    let dg = Tensor::from_fn(n, 3, |i| mj.g[i[1]][i[2]].d1(i[0]));
    let ddg = |e: usize, f: usize, a: usize, b: usize| mj.g[a][b].d2(e, f);
    let dddg = |e: usize, f: usize, h: usize, a: usize, b: usize| mj.g[a][b].d3(e, f, h);
    let dginv = Tensor::from_fn(n, 3, |i| mj.g_inv_jets[i[1]][i[2]].d1(i[0]));
    let ddginv = |e: usize, f: usize, a: usize, b: usize| mj.g_inv_jets[a][b].d2(e, f);

    // Christoffel symbols of the first kind Γ_dbc and derivatives.
    let gam1 = Tensor::from_fn(n, 3, |i| {
        let (d, b, c) = (i[0], i[1], i[2]);
        0.5 * (dg.at3(b, d, c) + dg.at3(c, d, b) - dg.at3(d, b, c))
    });
    let gam1_d = Tensor::from_fn(n, 4, |i| {
        let (e, d, b, c) = (i[0], i[1], i[2], i[3]);
        0.5 * (ddg(e, b, d, c) + ddg(e, c, d, b) - ddg(e, d, b, c))
    });
    let gam1_dd = Tensor::from_fn(n, 5, |i| {
        let (e, f, d, b, c) = (i[0], i[1], i[2], i[3], i[4]);
        0.5 * (dddg(e, f, b, d, c) + dddg(e, f, c, d, b) - dddg(e, f, d, b, c))
    });

    // Second kind: Γ^a_bc = g^{ad} Γ_dbc.
    let gamma = Tensor::from_fn(n, 3, |i| {
        (0..n).map(|d| g_inv[(i[0], d)] * gam1.at3(d, i[1], i[2])).sum()
    });
    let gamma_d = Tensor::from_fn(n, 4, |i| {
        let (e, a, b, c) = (i[0], i[1], i[2], i[3]);
        (0..n)
            .map(|d| dginv.at3(e, a, d) * gam1.at3(d, b, c) + g_inv[(a, d)] * gam1_d.at4(e, d, b, c))
            .sum()
    });
    let mut gamma_dd = vec![0.0; n3 * n2];
    for e in 0..n {
        for f in 0..n {
            for a in 0..n {
                for b in 0..n {
                    for c in 0..n {
                        let mut s = 0.0;
                        for d in 0..n {
                            s += ddginv(e, f, a, d) * gam1.at3(d, b, c)
                                + dginv.at3(e, a, d) * gam1_d.at4(f, d, b, c)
                                + dginv.at3(f, a, d) * gam1_d.at4(e, d, b, c)
                                + g_inv[(a, d)] * gam1_dd.at5(e, f, d, b, c);
                        }
                        gamma_dd[(((e * n + f) * n + a) * n + b) * n + c] = s;
                    }
                }
            }
        }
    }
    let gdd = |e: usize, f: usize, a: usize, b: usize, c: usize| gamma_dd[(((e * n + f) * n + a) * n + b) * n + c];

    // R(∂_a,∂_b)∂_c = Rm^f_abc ∂_f stored at [a][b][c][f].
    let rm = Tensor::from_fn(n, 4, |i| {
        let (a, b, c, f) = (i[0], i[1], i[2], i[3]);
        let mut s = gamma_d.at4(a, f, b, c) - gamma_d.at4(b, f, a, c);
        for e in 0..n {
            s += gamma.at3(e, b, c) * gamma.at3(f, a, e) - gamma.at3(e, a, c) * gamma.at3(f, b, e);
        }
        s
    });
    let rm_d = Tensor::from_fn(n, 5, |i| {
        let (h, a, b, c, f) = (i[0], i[1], i[2], i[3], i[4]);
        let mut s = gdd(h, a, f, b, c) - gdd(h, b, f, a, c);
        for e in 0..n {
            s += gamma_d.at4(h, e, b, c) * gamma.at3(f, a, e) + gamma.at3(e, b, c) * gamma_d.at4(h, f, a, e)
                - gamma_d.at4(h, e, a, c) * gamma.at3(f, b, e)
                - gamma.at3(e, a, c) * gamma_d.at4(h, f, b, e);
        }
        s
    });
    let riemann = Tensor::from_fn(n, 4, |i| {
        (0..n).map(|f| g[(i[3], f)] * rm.at4(i[0], i[1], i[2], f)).sum()
    });
    let riemann_d = Tensor::from_fn(n, 5, |i| {
        let (h, a, b, c, d) = (i[0], i[1], i[2], i[3], i[4]);
        (0..n)
            .map(|f| dg.at3(h, d, f) * rm.at4(a, b, c, f) + g[(d, f)] * rm_d.at5(h, a, b, c, f))
            .sum()
    });

    // Ricci, scalar curvature and their derivatives.
    let ricci = Tensor::from_fn(n, 2, |i| {
        let mut s = 0.0;
        for a in 0..n {
            for d in 0..n {
                s += g_inv[(a, d)] * riemann.at4(a, i[0], i[1], d);
            }
        }
        s
    });
    let ricci_d = Tensor::from_fn(n, 3, |i| {
        let (h, b, c) = (i[0], i[1], i[2]);
        let mut s = 0.0;
        for a in 0..n {
            for d in 0..n {
                s += dginv.at3(h, a, d) * riemann.at4(a, b, c, d) + g_inv[(a, d)] * riemann_d.at5(h, a, b, c, d);
            }
        }
        s
    });
    let mut tau = 0.0;
    let mut tau_d = vec![0.0; n];
    for b in 0..n {
        for c in 0..n {
            tau += g_inv[(b, c)] * ricci.at2(b, c);
            for (h, td) in tau_d.iter_mut().enumerate() {
                *td += dginv.at3(h, b, c) * ricci.at2(b, c) + g_inv[(b, c)] * ricci_d.at3(h, b, c);
            }
        }
    }
    let ricci_traceless = Tensor::from_fn(n, 2, |i| ricci.at2(i[0], i[1]) - tau / nf * g[(i[0], i[1])]);

    let k1 = 1.0 / (nf - 2.0);
    let k2 = 1.0 / (2.0 * (nf - 1.0));
    let schouten = Tensor::from_fn(n, 2, |i| k1 * (ricci.at2(i[0], i[1]) - k2 * tau * g[(i[0], i[1])]));
    let schouten_d = Tensor::from_fn(n, 3, |i| {
        let (h, a, b) = (i[0], i[1], i[2]);
        k1 * (ricci_d.at3(h, a, b) - k2 * (tau_d[h] * g[(a, b)] + tau * dg.at3(h, a, b)))
    });
    let schouten_grad = Tensor::from_fn(n, 3, |i| {
        let (e, a, b) = (i[0], i[1], i[2]);
        let mut s = schouten_d.at3(e, a, b);
        for m in 0..n {
            s -= gamma.at3(m, e, a) * schouten.at2(m, b) + gamma.at3(m, e, b) * schouten.at2(a, m);
        }
        s
    });
    let cotton = Tensor::from_fn(n, 3, |i| schouten_grad.at3(i[0], i[1], i[2]) - schouten_grad.at3(i[1], i[0], i[2]));

    // Weyl and its derivatives.
    let g_t = Tensor::from_matrix(&g);
    let weyl = {
        let gh = kulkarni_nomizu(&g_t, &schouten)?;
        Tensor::from_fn(n, 4, |i| riemann.get(i) + gh.get(i))
    };
    let weyl_d = Tensor::from_fn(n, 5, |i| {
        let (h, x, y, u, v) = (i[0], i[1], i[2], i[3], i[4]);
        let kn = |ax: &dyn Fn(usize, usize) -> f64, bx: &dyn Fn(usize, usize) -> f64| {
            ax(x, u) * bx(y, v) + ax(y, v) * bx(x, u) - ax(x, v) * bx(y, u) - ax(y, u) * bx(x, v)
        };
        let gv = |p: usize, q: usize| g[(p, q)];
        let dgv = |p: usize, q: usize| dg.at3(h, p, q);
        let sh = |p: usize, q: usize| schouten.at2(p, q);
        let dsh = |p: usize, q: usize| schouten_d.at3(h, p, q);
        riemann_d.at5(h, x, y, u, v) + kn(&dgv, &sh) + kn(&gv, &dsh)
    });
    let weyl_grad = Tensor::from_fn(n, 5, |i| {
        let (e, a, b, c, d) = (i[0], i[1], i[2], i[3], i[4]);
        let mut s = weyl_d.at5(e, a, b, c, d);
        for m in 0..n {
            s -= gamma.at3(m, e, a) * weyl.at4(m, b, c, d)
                + gamma.at3(m, e, b) * weyl.at4(a, m, c, d)
                + gamma.at3(m, e, c) * weyl.at4(a, b, m, d)
                + gamma.at3(m, e, d) * weyl.at4(a, b, c, m);
        }
        s
    });
    let weyl_div = Tensor::from_fn(n, 3, |i| {
        let mut s = 0.0;
        for e in 0..n {
            for d in 0..n {
                s += g_inv[(e, d)] * weyl_grad.at5(e, i[0], i[1], i[2], d);
            }
        }
        s
    });

    Ok(CurvatureBundle {
        point: mj.point.clone(),
        g,
        g_inv,
        dg,
        gamma,
        gamma_d,
        gamma_dd,
        riemann,
        riemann_d,
        ricci,
        tau,
        ricci_traceless,
        schouten,
        schouten_grad,
        cotton,
        weyl,
        weyl_d,
        weyl_grad,
        weyl_div,
        rho: tau / (nf * (nf - 1.0)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::parse_metric;

    #[test]
    fn kulkarni_nomizu_of_metric_with_itself() {
        let g = Tensor::from_fn(3, 2, |i| if i[0] == i[1] { 1.0 } else { 0.0 });
        let gg = kulkarni_nomizu(&g, &g).unwrap();
        assert_eq!(gg.at4(0, 1, 0, 1), 2.0);
        assert_eq!(gg.at4(0, 1, 1, 0), -2.0);
        let zero = Tensor::zeros(3, 2);
        assert_eq!(kulkarni_nomizu(&zero, &g).unwrap().max_abs(), 0.0);
        assert!(kulkarni_nomizu(&g, &Tensor::zeros(3, 3)).is_err());
    }

    #[test]
    fn frame_components_match_direct_contraction() {
        let t = Tensor::from_fn(3, 3, |i| (i[0] * 9 + i[1] * 3 + i[2]) as f64 * 0.1 - 1.0);
        let e = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.0, 1.5, -0.3, 0.4, 0.0, 0.7]);
        let f = t.in_frame(&e);
        let direct = Tensor::from_fn(3, 3, |i| {
            let mut s = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    for c in 0..3 {
                        s += t.at3(a, b, c) * e[(a, i[0])] * e[(b, i[1])] * e[(c, i[2])];
                    }
                }
            }
            s
        });
        assert!(f.max_diff(&direct) < 1e-14);
    }

    #[test]
    fn round_three_sphere() {
        let def = parse_metric("coords a b c\ng = [[1,0,0],[sin(a)^2, 0],[sin(a)^2*sin(b)^2]]\n").unwrap();
        let b = bundle_at(&def, &[1.1, 0.7, 0.2]).unwrap();
        assert!((b.tau - 6.0).abs() < 1e-12);
        assert!((b.rho - 1.0).abs() < 1e-12);
        assert!(b.ricci_traceless.max_abs() < 1e-12);
        assert!(b.weyl.max_abs() < 1e-12);
        assert!(b.cotton.max_abs() < 1e-11);
    }

    #[test]
    fn two_dimensional_input_rejected() {
        let def = parse_metric("coords x y\ng = [[1,0],[0,1]]\n").unwrap();
        assert!(matches!(bundle_at(&def, &[0.0, 0.0]), Err(CurvatureError::DimensionTooSmall(2))));
    }

    #[test]
    fn f_v_is_trace_free_and_vanishes_for_zero_field() {
        let g = DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.1, 1.0, 0.2, 0.0, 0.2, 1.5]);
        let gi = g.clone().try_inverse().unwrap();
        let zero = f_v_tensor(&g, &[0.0; 3], &DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(zero.amax(), 0.0);
        let dv = DMatrix::from_row_slice(3, 3, &[0.3, -1.0, 0.2, 0.5, 0.1, 0.0, -0.7, 0.4, 0.9]);
        let f = f_v_tensor(&g, &[0.2, -0.4, 1.1], &dv).unwrap();
        let tr: f64 = (0..3).flat_map(|a| (0..3).map(move |b| (a, b))).map(|(a, b)| gi[(a, b)] * f[(a, b)]).sum();
        assert!(tr.abs() < 1e-13);
        assert!(f_v_tensor(&g, &[0.0; 2], &dv).is_err());
    }
}
