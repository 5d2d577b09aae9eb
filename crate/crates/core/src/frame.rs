//! Weyl-kernel frames and field-level numerics.
//!
//! Two ways of differentiating kernel frames are provided:
//!
//! * **jet route** — differentiating `W(ξ, ·, ·, ·) = 0` gives the transversal
//!   part of `∂ξ` exactly from `∂W`, so the mean curvature, the second
//!   fundamental form and `dη` on transversal pairs need no finite
//!   differences;
//! * **stencil route** — smooth frame fields (kernel projector applied to fixed
//!   reference vectors, Gram–Schmidt, Procrustes alignment) differentiated by
//!   central differences with one Richardson step.
//!
//! The two are cross-checked in the test suite; detection uses the jet route
//! wherever it applies.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::curvature::{bundle_at, CurvatureBundle, CurvatureError, Tensor};
use crate::linalg::{decide_rank, g_dot, gram_schmidt_g, orthonormal_frame, procrustes, DEFAULT_MIN_GAP};
use crate::metric::{MetricDefinition, MetricError};
use crate::sample::{map_indices, Sampler};

/// Curvature magnitudes below this are treated as zero when deciding ranks.
pub const ABS_SCALE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FrameError {
    #[error("stencil point {point:?} lies outside the domain")]
    StencilOutOfDomain { point: Vec<f64> },
    #[error("frame alignment failed (deviation {deviation:e})")]
    GaugeInstability { deviation: f64 },
    #[error("kernel rank {found} at {point:?}, expected {expected}")]
    RankDrift {
        expected: usize,
        found: usize,
        point: Vec<f64>,
    },
    #[error("no clean singular-value gap at {point:?} (gap {gap:e})")]
    AmbiguousRank { point: Vec<f64>, gap: f64 },
    #[error("kernel rank {0}, expected 1")]
    RankNotOne(usize),
    #[error("dimension {0} is even; the contact top form needs odd dimension")]
    OddDimensionRequired(usize),
    #[error("chain candidate leaves Ker(W) (relative residual {residual:e})")]
    KernelEscape { residual: f64 },
    #[error("field evaluation failed: {0}")]
    Field(String),
    #[error(transparent)]
    Curvature(#[from] CurvatureError),
}

impl From<MetricError> for FrameError {
    fn from(e: MetricError) -> Self {
        FrameError::Curvature(CurvatureError::Metric(e))
    }
}

/// Numerical tolerances shared by the frame and detection layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameConfig {
    /// Relative singular-value threshold for kernel rank decisions.
    pub tol_rank: f64,
    /// Required ratio between kept and dropped singular values.
    pub min_gap: f64,
    /// Base finite-difference step (chart units).
    pub step: f64,
    /// Tolerance for finite-difference quantities.
    pub tol_field: f64,
}

impl Default for FrameConfig {
    fn default() -> Self {
        FrameConfig {
            tol_rank: 1e-7,
            min_gap: DEFAULT_MIN_GAP,
            step: 1e-4,
            tol_field: 1e-4,
        }
    }
}

/// Kernel of `X ↦ W(X, ·, ·, ·)` at a point.
#[derive(Debug, Clone)]
pub struct KernelFrame {
    pub rank_k: usize,
    /// g-orthonormal kernel vectors (chart components).
    pub xi: Vec<Vec<f64>>,
    /// Orthogonal projector onto the kernel in the g-orthonormal coordinates
    /// given by `onb`.
    pub projector: DMatrix<f64>,
    /// g-orthonormal vectors spanning the orthogonal complement.
    pub transversal: Vec<Vec<f64>>,
    /// Singular values of the kernel map, descending.
    pub sing_values: Vec<f64>,
    /// The g-orthonormal chart frame the SVD was taken in (columns).
    pub onb: DMatrix<f64>,
    /// Reference scale for relative thresholds.
    pub scale: f64,
    pub gap: f64,
    /// Whether the rank decision had a clean gap.
    pub clean: bool,
}

impl KernelFrame {
    /// Projector onto the kernel acting on chart components: `Σ ξ_i g(ξ_i, ·)`.
    pub fn chart_projector(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        let n = g.nrows();
        let mut p = DMatrix::zeros(n, n);
        for x in &self.xi {
            let xv = DVector::from_column_slice(x);
            let xl = g * &xv;
            p += &xv * xl.transpose();
        }
        p
    }

    pub fn perp(&self, g: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        for x in &self.xi {
            let c = g_dot(g, x, v);
            for (o, xi) in out.iter_mut().zip(x) {
                *o -= c * xi;
            }
        }
        out
    }

    pub fn largest_singular_value(&self) -> f64 {
        self.sing_values.first().copied().unwrap_or(0.0)
    }
}

/// Extracts the Weyl kernel by an SVD of `W(E_i, ·, ·, ·)` in a g-orthonormal
/// frame.
pub fn weyl_kernel(b: &CurvatureBundle, cfg: &FrameConfig) -> KernelFrame {
    let n = b.dim();
    let e = orthonormal_frame(&b.g).expect("bundle metric is positive definite");
    let w = b.weyl.in_frame(&e);
    let n3 = n * n * n;
    let mt = DMatrix::from_fn(n3, n, |r, i| w.data()[i * n3 + r]);
    let svd = mt.svd(false, true);
    let vt = svd.v_t.expect("v requested");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let r_scale = b.riemann.in_frame(&e).max_abs();
    let scale = sv[0].max(r_scale).max(ABS_SCALE_FLOOR);
    let d = decide_rank(&sv, cfg.tol_rank, scale, cfg.min_gap);
    let k = n - d.rank;
    let coeff = |idx: usize| -> DVector<f64> { DVector::from_fn(n, |r, _| vt[(order[idx], r)]) };
    let mut xi = Vec::with_capacity(k);
    let mut projector = DMatrix::zeros(n, n);
    for idx in d.rank..n {
        let c = coeff(idx);
        projector += &c * c.transpose();
        let mut v: Vec<f64> = (&e * &c).iter().copied().collect();
        if k == 1 {
            // Fix the sign so rank-1 fields are consistent between points.
            let imax = (0..n).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap();
            if v[imax] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
        xi.push(v);
    }
    let transversal = (0..d.rank).map(|idx| (&e * coeff(idx)).iter().copied().collect()).collect();
    KernelFrame {
        rank_k: k,
        xi,
        projector,
        transversal,
        sing_values: sv,
        onb: e,
        scale,
        gap: d.gap,
        clean: d.clean,
    }
}

/// Bundle plus kernel frame at a point.
pub fn kernel_at(def: &MetricDefinition, p: &[f64], cfg: &FrameConfig) -> Result<(CurvatureBundle, KernelFrame), FrameError> {
    let b = bundle_at(def, p)?;
    let f = weyl_kernel(&b, cfg);
    Ok((b, f))
}

// ---------------------------------------------------------------------------
// Degeneracy survey

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExceptionalPoint {
    pub index: usize,
    pub point: Vec<f64>,
    pub rank: Option<usize>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegeneracyReport {
    pub modal_rank: usize,
    /// Samples with a rank decision; equals the histogram total.
    pub sample_count: usize,
    pub requested: usize,
    pub exceptional_points: Vec<ExceptionalPoint>,
    pub rank_histogram: BTreeMap<usize, usize>,
    /// Per-sample rank (None where evaluation failed).
    pub ranks: Vec<Option<usize>>,
}

impl DegeneracyReport {
    pub fn exceptional_fraction(&self) -> f64 {
        self.exceptional_points.len() as f64 / self.requested.max(1) as f64
    }

    pub fn is_exceptional(&self, index: usize) -> bool {
        self.exceptional_points.iter().any(|e| e.index == index)
    }
}

pub fn degeneracy_survey(def: &MetricDefinition, sampler: &Sampler, count: usize, cfg: &FrameConfig) -> DegeneracyReport {
    let results = map_indices(count, |i| {
        let p = sampler.point(i);
        let r = kernel_at(def, &p, cfg).map(|(_, f)| (f.rank_k, f.clean, f.gap));
        (p, r)
    });
    let mut hist = BTreeMap::new();
    let mut ranks = Vec::with_capacity(count);
    for (_, r) in &results {
        match r {
            Ok((k, _, _)) => {
                *hist.entry(*k).or_insert(0) += 1;
                ranks.push(Some(*k));
            }
            Err(_) => ranks.push(None),
        }
    }
    // Most frequent rank; ties go to the larger rank.
    let modal_rank = hist
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(a.0.cmp(b.0)))
        .map(|(k, _)| *k)
        .unwrap_or(0);
    let mut exceptional_points = Vec::new();
    for (i, (p, r)) in results.into_iter().enumerate() {
        let reason = match &r {
            Err(e) => Some(format!("evaluation failed: {e}")),
            Ok((k, _, _)) if *k != modal_rank => Some(format!("rank {k} differs from modal rank {modal_rank}")),
            Ok((_, false, gap)) => Some(format!("no clean singular-value gap (ratio {gap:.3e})")),
            Ok(_) => None,
        };
        if let Some(reason) = reason {
            exceptional_points.push(ExceptionalPoint {
                index: i,
                point: p,
                rank: r.ok().map(|x| x.0),
                reason,
            });
        }
    }
    DegeneracyReport {
        modal_rank,
        sample_count: hist.values().sum(),
        requested: count,
        exceptional_points,
        rank_histogram: hist,
        ranks,
    }
}

// ---------------------------------------------------------------------------
// Finite differences

/// Coordinate derivative of a field: `value[e][c] = ∂_e F^c`.
#[derive(Debug, Clone)]
pub struct Derivative {
    pub value: Vec<Vec<f64>>,
    /// Richardson error estimate (max over entries).
    pub error: f64,
}

impl Derivative {
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.value.len();
        let m = self.value.first().map_or(0, |r| r.len());
        DMatrix::from_fn(n, m, |e, c| self.value[e][c])
    }
}

fn stencil_error(e: FrameError, q: &[f64]) -> FrameError {
    match e {
        FrameError::Curvature(CurvatureError::Metric(MetricError::OutOfDomain { .. })) => {
            FrameError::StencilOutOfDomain { point: q.to_vec() }
        }
        other => other,
    }
}

/// Central differences at steps `h` and `h/2`, combined by one Richardson
/// step.
pub fn field_derivative<F>(field: F, p: &[f64], h: f64) -> Result<Derivative, FrameError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, FrameError>,
{
    let n = p.len();
    let mut value = Vec::with_capacity(n);
    let mut error: f64 = 0.0;
    let eval = |e: usize, s: f64| -> Result<Vec<f64>, FrameError> {
        let mut q = p.to_vec();
        q[e] += s;
        field(&q).map_err(|err| stencil_error(err, &q))
    };
    for e in 0..n {
        let (a1, b1) = (eval(e, h)?, eval(e, -h)?);
        let (a2, b2) = (eval(e, 0.5 * h)?, eval(e, -0.5 * h)?);
        let row: Vec<f64> = (0..a1.len())
            .map(|c| {
                let d1 = (a1[c] - b1[c]) / (2.0 * h);
                let d2 = (a2[c] - b2[c]) / h;
                let r = (4.0 * d2 - d1) / 3.0;
                error = error.max((r - d2).abs());
                r
            })
            .collect();
        value.push(row);
    }
    Ok(Derivative { value, error })
}

// ---------------------------------------------------------------------------
// Smooth frame fields

/// A field of g-orthonormal frames extending given vectors at a base point:
/// at `q` the references are projected onto the kernel (or its complement),
/// Gram–Schmidt orthonormalised and aligned to the references by an
/// orthogonal Procrustes rotation.
pub struct FrameField<'a> {
    pub def: &'a MetricDefinition,
    pub reference: Vec<Vec<f64>>,
    /// Expected kernel rank at every evaluation point.
    pub kernel_rank: usize,
    /// Project onto the complement of the kernel instead of the kernel.
    pub transversal: bool,
    pub cfg: FrameConfig,
}

impl<'a> FrameField<'a> {
    pub fn kernel(def: &'a MetricDefinition, frame: &KernelFrame, cfg: FrameConfig) -> Self {
        FrameField {
            def,
            reference: frame.xi.clone(),
            kernel_rank: frame.rank_k,
            transversal: false,
            cfg,
        }
    }

    pub fn complement(def: &'a MetricDefinition, frame: &KernelFrame, cfg: FrameConfig) -> Self {
        FrameField {
            def,
            reference: frame.transversal.clone(),
            kernel_rank: frame.rank_k,
            transversal: true,
            cfg,
        }
    }

    pub fn at(&self, q: &[f64]) -> Result<Vec<Vec<f64>>, FrameError> {
        let (b, f) = kernel_at(self.def, q, &self.cfg)?;
        if f.rank_k != self.kernel_rank {
            return Err(FrameError::RankDrift {
                expected: self.kernel_rank,
                found: f.rank_k,
                point: q.to_vec(),
            });
        }
        let pk = f.chart_projector(&b.g);
        let n = q.len();
        let proj = if self.transversal {
            DMatrix::identity(n, n) - pk
        } else {
            pk
        };
        let projected: Vec<Vec<f64>> = self
            .reference
            .iter()
            .map(|r| (&proj * DVector::from_column_slice(r)).iter().copied().collect())
            .collect();
        let ortho = gram_schmidt_g(&b.g, &projected, 1e-8);
        let m = self.reference.len();
        if ortho.len() != m {
            return Err(FrameError::GaugeInstability { deviation: 1.0 });
        }
        let a = DMatrix::from_fn(n, m, |r, c| ortho[c][r]);
        let target = DMatrix::from_fn(n, m, |r, c| self.reference[c][r]);
        let aligned = if m > 0 { &a * procrustes(&a, &target) } else { a };
        let deviation = (&aligned - &target).norm() / target.norm().max(1e-300);
        if deviation > 0.5 {
            return Err(FrameError::GaugeInstability { deviation });
        }
        Ok((0..m).map(|c| aligned.column(c).iter().copied().collect()).collect())
    }

    /// Frame flattened into one vector (for differencing).
    pub fn flat(&self, q: &[f64]) -> Result<Vec<f64>, FrameError> {
        Ok(self.at(q)?.concat())
    }

    /// `∂_e` of each frame vector: `out[i][e][c]`.
    pub fn derivative(&self, p: &[f64], h: f64) -> Result<(Vec<Vec<Vec<f64>>>, f64), FrameError> {
        let d = field_derivative(|q| self.flat(q), p, h)?;
        let n = p.len();
        let m = self.reference.len();
        let out = (0..m)
            .map(|i| (0..n).map(|e| d.value[e][i * n..(i + 1) * n].to_vec()).collect())
            .collect();
        Ok((out, d.error))
    }
}

/// `∇_X Y = X^e (∂_e Y + Γ^·_{ec} Y^c)` given `dy[e][c] = ∂_e Y^c`.
pub fn covariant_along(gamma: &Tensor, x: &[f64], y: &[f64], dy: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|c| {
            let mut s = 0.0;
            for e in 0..n {
                let mut t = dy[e][c];
                for d in 0..n {
                    t += gamma.at3(c, e, d) * y[d];
                }
                s += x[e] * t;
            }
            s
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Jet route: transversal derivatives of the kernel frame

/// For each kernel vector `ξ_i`, the matrix `[e][c]` of `(π^⊥ ∇_{∂_e} ξ_i)^c`.
///
/// Differentiating `A ξ = 0` (with `A` the chart matrix of `X ↦ W(X,·,·,·)`)
/// gives `A ∂_e ξ = -(∂_e A) ξ`, which fixes `∂_e ξ` up to kernel
/// directions — exactly the part the transversal projection removes.
pub fn transversal_derivatives(b: &CurvatureBundle, frame: &KernelFrame) -> Vec<DMatrix<f64>> {
    let n = b.dim();
    let k = frame.rank_k;
    if k == 0 || k == n {
        return vec![DMatrix::zeros(n, n); k];
    }
    let n3 = n * n * n;
    let a = DMatrix::from_fn(n3, n, |r, col| b.weyl.data()[col * n3 + r]);
    let svd = a.svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v requested");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let r = n - k;
    // Truncated pseudo-inverse.
    let mut pinv = DMatrix::zeros(n, n3);
    for &idx in &order[..r] {
        let s = svd.singular_values[idx];
        let v = vt.row(idx).transpose();
        let uc = u.column(idx);
        pinv += (v * uc.transpose()) / s;
    }
    let proj_perp = DMatrix::identity(n, n) - frame.chart_projector(&b.g);
    frame
        .xi
        .iter()
        .map(|xi| {
            let mut out = DMatrix::zeros(n, n);
            for e in 0..n {
                // (∂_e A) ξ
                let da_xi = DVector::from_fn(n3, |row, _| {
                    (0..n).map(|c| b.weyl_d.data()[(e * n + c) * n3 + row] * xi[c]).sum()
                });
                let y = -(&pinv * da_xi);
                let cov = DVector::from_fn(n, |c, _| {
                    y[c] + (0..n).map(|d| b.gamma.at3(c, e, d) * xi[d]).sum::<f64>()
                });
                let pc = &proj_perp * cov;
                for c in 0..n {
                    out[(e, c)] = pc[c];
                }
            }
            out
        })
        .collect()
}

fn apply_rows(m: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n).map(|c| (0..n).map(|e| x[e] * m[(e, c)]).sum()).collect()
}

/// Transversal part of `∇_X ξ_i` from the jet-route derivatives.
pub fn perp_covariant(t: &[DMatrix<f64>], i: usize, x: &[f64]) -> Vec<f64> {
    apply_rows(&t[i], x)
}

/// `rot(ξ_i)(X, Y)` for transversal `X, Y` (jet route).
pub fn kernel_rotation(g: &DMatrix<f64>, t: &[DMatrix<f64>], i: usize, x: &[f64], y: &[f64]) -> f64 {
    g_dot(g, &perp_covariant(t, i, x), y) - g_dot(g, &perp_covariant(t, i, y), x)
}

/// Mean curvature data of the kernel foliation.
#[derive(Debug, Clone, Serialize)]
pub struct FoliationData {
    /// `H = Σ_i π^⊥ ∇_{ξ_i} ξ_i` (chart components).
    pub h_vec: Vec<f64>,
    /// `h(ξ_i, ξ_j) = π^⊥ ∇_{ξ_i} ξ_j`.
    pub h_form: Vec<Vec<Vec<f64>>>,
    /// `max |h(ξ_i,ξ_j) - δ_ij H/k|`.
    pub umbilic_residual: f64,
    /// `max |h(ξ_i,ξ_j)|`.
    pub geodesic_residual: f64,
}

fn foliation_from_form(g: &DMatrix<f64>, h_form: Vec<Vec<Vec<f64>>>) -> FoliationData {
    let k = h_form.len();
    let n = g.nrows();
    let mut h_vec = vec![0.0; n];
    for (i, row) in h_form.iter().enumerate() {
        for c in 0..n {
            h_vec[c] += row[i][c];
        }
    }
    let norm = |v: &[f64]| g_dot(g, v, v).max(0.0).sqrt();
    let mut umb: f64 = 0.0;
    let mut geo: f64 = 0.0;
    for (i, row) in h_form.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            geo = geo.max(norm(v));
            let d: Vec<f64> = (0..n)
                .map(|c| v[c] - if i == j { h_vec[c] / k as f64 } else { 0.0 })
                .collect();
            umb = umb.max(norm(&d));
        }
    }
    FoliationData {
        h_vec,
        h_form,
        umbilic_residual: umb,
        geodesic_residual: geo,
    }
}

/// Mean curvature and second fundamental form from jets only.
pub fn mean_curvature_jet(b: &CurvatureBundle, frame: &KernelFrame) -> FoliationData {
    let t = transversal_derivatives(b, frame);
    let k = frame.rank_k;
    let h_form = (0..k)
        .map(|i| (0..k).map(|j| perp_covariant(&t, j, &frame.xi[i])).collect())
        .collect();
    foliation_from_form(&b.g, h_form)
}

/// Mean curvature via finite differences of the aligned kernel frame field.
pub fn mean_curvature(def: &MetricDefinition, frame: &KernelFrame, p: &[f64], cfg: &FrameConfig) -> Result<FoliationData, FrameError> {
    let b = bundle_at(def, p)?;
    let k = frame.rank_k;
    if k == 0 {
        return Ok(foliation_from_form(&b.g, Vec::new()));
    }
    let field = FrameField::kernel(def, frame, *cfg);
    let (d, _) = field.derivative(p, cfg.step)?;
    let h_form = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    let v = covariant_along(&b.gamma, &frame.xi[i], &frame.xi[j], &d[j]);
                    frame.perp(&b.g, &v)
                })
                .collect()
        })
        .collect();
    Ok(foliation_from_form(&b.g, h_form))
}

/// `H(q)` as a field, computed by the jet route with a rank check.
pub fn mean_curvature_field(def: &MetricDefinition, q: &[f64], expected_rank: usize, cfg: &FrameConfig) -> Result<Vec<f64>, FrameError> {
    let (b, f) = kernel_at(def, q, cfg)?;
    if f.rank_k != expected_rank {
        return Err(FrameError::RankDrift {
            expected: expected_rank,
            found: f.rank_k,
            point: q.to_vec(),
        });
    }
    Ok(mean_curvature_jet(&b, &f).h_vec)
}

// ---------------------------------------------------------------------------
// Rotation

/// `rot(V)` as an antisymmetric matrix of chart components,
/// `rot(V)(X,Y) = Σ X^a Y^b rot[a][b]`, computed two ways.
#[derive(Debug, Clone)]
pub struct Rotation {
    /// `g(∇_a V, ∂_b) - g(∂_a, ∇_b V)`.
    pub covariant: DMatrix<f64>,
    /// `∂_a V_b - ∂_b V_a` with `V_b = g_bc V^c`.
    pub exterior: DMatrix<f64>,
    pub error: f64,
}

impl Rotation {
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let n = x.len();
        let mut s = 0.0;
        for a in 0..n {
            for b in 0..n {
                s += self.covariant[(a, b)] * x[a] * y[b];
            }
        }
        s
    }

    /// Largest component in a g-orthonormal frame.
    pub fn onb_max(&self, g: &DMatrix<f64>) -> f64 {
        let e = orthonormal_frame(g).expect("positive definite");
        (e.transpose() * &self.covariant * &e).amax()
    }
}

/// Rotation of a vector field at `p`. `v` evaluates the chart components.
pub fn rotation<F>(def: &MetricDefinition, v: F, p: &[f64], h: f64) -> Result<Rotation, FrameError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, FrameError>,
{
    let n = p.len();
    let b = bundle_at(def, p)?;
    let v0 = v(p)?;
    let dv = field_derivative(&v, p, h)?;
    let dvm = dv.matrix();
    let nabla = crate::curvature::covariant_vector_derivative(&b.gamma, &v0, &dvm);
    let gn = &nabla * &b.g; // [a][b] = g(∇_a V, ∂_b)
    let covariant = &gn - gn.transpose();
    let lowered = |q: &[f64]| -> Result<Vec<f64>, FrameError> {
        let gq = def.values_at(q)?;
        let vq = v(q)?;
        Ok((0..n).map(|a| (0..n).map(|c| gq[(a, c)] * vq[c]).sum()).collect())
    };
    let dl = field_derivative(lowered, p, h)?;
    let dlm = dl.matrix();
    let exterior = &dlm - dlm.transpose();
    Ok(Rotation {
        covariant,
        exterior,
        error: dv.error.max(dl.error),
    })
}

// ---------------------------------------------------------------------------
// Integrability of the transversal distribution

/// `max |g(ξ_r, [E_a, E_b])| = max |rot(ξ_r)(E_a, E_b)|` (jet route).
pub fn frobenius_transversal_jet(b: &CurvatureBundle, frame: &KernelFrame) -> f64 {
    let t = transversal_derivatives(b, frame);
    let e = &frame.transversal;
    let mut m: f64 = 0.0;
    for r in 0..frame.rank_k {
        for a in 0..e.len() {
            for c in a + 1..e.len() {
                m = m.max(kernel_rotation(&b.g, &t, r, &e[a], &e[c]).abs());
            }
        }
    }
    m
}

/// Same defect from brackets of the aligned transversal frame field.
pub fn frobenius_transversal(def: &MetricDefinition, frame: &KernelFrame, p: &[f64], cfg: &FrameConfig) -> Result<f64, FrameError> {
    if frame.rank_k == 0 || frame.rank_k == p.len() {
        return Ok(0.0);
    }
    let b = bundle_at(def, p)?;
    let field = FrameField::complement(def, frame, *cfg);
    let (d, _) = field.derivative(p, cfg.step)?;
    let e = &frame.transversal;
    let n = p.len();
    let mut m: f64 = 0.0;
    for a in 0..e.len() {
        for c in a + 1..e.len() {
            let br: Vec<f64> = (0..n)
                .map(|x| (0..n).map(|s| e[a][s] * d[c][s][x] - e[c][s] * d[a][s][x]).sum())
                .collect();
            for xi in &frame.xi {
                m = m.max(g_dot(&b.g, xi, &br).abs());
            }
        }
    }
    Ok(m)
}

// ---------------------------------------------------------------------------
// Contact invariants

#[derive(Debug, Clone, Serialize)]
pub struct ContactData {
    /// `Ω_ij = dη(E_i, E_j)` on the transversal frame.
    pub omega: Vec<Vec<f64>>,
    /// Norm of `η ∧ dη`.
    pub eta_wedge_deta_norm: f64,
    /// `|η ∧ (dη)^m|` on an orthonormal frame (odd dimension `2m+1`).
    pub top_form_norm: Option<f64>,
    pub det_omega: f64,
}

/// Contact data of a rank-1 kernel, with `η` the dual of the unit `ξ` and
/// `dη = rot(ξ)` (no factor 1/2).
pub fn contact_invariants(b: &CurvatureBundle, frame: &KernelFrame) -> Result<ContactData, FrameError> {
    if frame.rank_k != 1 {
        return Err(FrameError::RankNotOne(frame.rank_k));
    }
    let t = transversal_derivatives(b, frame);
    let e = &frame.transversal;
    let m = e.len();
    let omega: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..m).map(|j| kernel_rotation(&b.g, &t, 0, &e[i], &e[j])).collect())
        .collect();
    let mut sq = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            sq += omega[i][j] * omega[i][j];
        }
    }
    let om = DMatrix::from_fn(m, m, |i, j| omega[i][j]);
    let det = om.determinant();
    let top = if b.dim() % 2 == 1 {
        let half = m / 2;
        let fact: f64 = (1..=half).map(|x| x as f64).product();
        Some(fact * det.abs().sqrt())
    } else {
        None
    };
    Ok(ContactData {
        omega,
        eta_wedge_deta_norm: sq.sqrt(),
        top_form_norm: top,
        det_omega: det,
    })
}

// ---------------------------------------------------------------------------
// κ-nullity

/// `max |R(X,Y)Z - κ(g(Y,Z)X - g(X,Z)Y)|` over orthonormal frame pairs.
pub fn kappa_nullity_residual(b: &CurvatureBundle, z: &[f64], kappa: f64) -> f64 {
    let n = b.dim();
    let e = orthonormal_frame(&b.g).expect("positive definite");
    let r = b.riemann.in_frame(&e);
    // z in the orthonormal frame: z = E c, c = E^T g z.
    let zc: Vec<f64> = (0..n).map(|i| (0..n).map(|a| e[(a, i)] * (0..n).map(|c| b.g[(a, c)] * z[c]).sum::<f64>()).sum()).collect();
    let mut worst: f64 = 0.0;
    for x in 0..n {
        for y in 0..n {
            let mut sq = 0.0;
            for w in 0..n {
                let mut v: f64 = (0..n).map(|c| r.at4(x, y, c, w) * zc[c]).sum();
                let dyw = if x == w { zc[y] } else { 0.0 };
                let dxw = if y == w { zc[x] } else { 0.0 };
                v -= kappa * (dyw - dxw);
                sq += v * v;
            }
            worst = worst.max(sq.sqrt());
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Nullity chain

#[derive(Debug, Clone, PartialEq)]
pub enum ChainStep {
    TotallyGeodesic,
    Extended {
        vectors: Vec<Vec<f64>>,
        /// `(p, l)` of the first vector `∇_{ξ_p} ξ_l` leaving the span (0-based).
        source: (usize, usize),
    },
}

/// The ordered series `∇_{ξ_p} ξ_l` used to extend a chain.
pub fn chain_series(k: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for m in 0..k {
        for l in 0..m {
            out.push((m, l));
        }
        for l in 0..m {
            out.push((l, m));
        }
        out.push((m, m));
    }
    out
}

/// One extension step of a kernel sub-distribution spanned by `current`.
pub fn nullity_chain_extend(def: &MetricDefinition, p: &[f64], current: &[Vec<f64>], cfg: &FrameConfig) -> Result<ChainStep, FrameError> {
    if current.is_empty() {
        return Ok(ChainStep::TotallyGeodesic);
    }
    let (b, frame) = kernel_at(def, p, cfg)?;
    let field = FrameField {
        def,
        reference: current.to_vec(),
        kernel_rank: frame.rank_k,
        transversal: false,
        cfg: *cfg,
    };
    let (d, _) = field.derivative(p, cfg.step)?;
    let k = current.len();
    let n = p.len();
    for (pi, li) in chain_series(k) {
        let v = covariant_along(&b.gamma, &current[pi], &current[li], &d[li]);
        let mut w = v.clone();
        for x in current {
            let c = g_dot(&b.g, x, &v);
            for (wi, xi) in w.iter_mut().zip(x) {
                *wi -= c * xi;
            }
        }
        let norm = g_dot(&b.g, &w, &w).max(0.0).sqrt();
        if norm > cfg.tol_field {
            let unit: Vec<f64> = w.iter().map(|x| x / norm).collect();
            let ins = b.weyl_insert_first(&unit).in_frame(&frame.onb).max_abs();
            let residual = ins / frame.largest_singular_value().max(frame.scale);
            if residual > cfg.tol_field * n as f64 {
                return Err(FrameError::KernelEscape { residual });
            }
            let mut vectors = current.to_vec();
            vectors.push(unit);
            return Ok(ChainStep::Extended {
                vectors,
                source: (pi, li),
            });
        }
    }
    Ok(ChainStep::TotallyGeodesic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::parse_metric;

    #[test]
    fn derivative_of_coordinate_function() {
        let d = field_derivative(|q| Ok(vec![q[0]]), &[0.3, 0.1], 1e-3).unwrap();
        assert!((d.value[0][0] - 1.0).abs() < 1e-14);
        assert!(d.value[1][0].abs() < 1e-14);
    }

    #[test]
    fn derivative_of_sine_field() {
        let d = field_derivative(|q| Ok(vec![0.0, q[0].sin()]), &[0.4, 0.0], 1e-3).unwrap();
        assert!((d.value[0][1] - 0.4f64.cos()).abs() < 1e-9);
    }

    #[test]
    fn chain_series_order() {
        assert_eq!(chain_series(2), vec![(0, 0), (1, 0), (0, 1), (1, 1)]);
        assert_eq!(chain_series(3)[4..], [(2, 0), (2, 1), (0, 2), (1, 2), (2, 2)]);
    }

    #[test]
    fn flat_kernel_is_everything() {
        let def = parse_metric("coords a b c d\ng = [[1,0,0,0],[1,0,0],[1,0],[1]]\n").unwrap();
        let (b, f) = kernel_at(&def, &[0.0; 4], &FrameConfig::default()).unwrap();
        assert_eq!(f.rank_k, 4);
        assert!(f.clean);
        assert!(mean_curvature_jet(&b, &f).h_vec.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn rotation_of_planar_vortex() {
        // Third flat coordinate so the bundle exists.
        let def = parse_metric("coords x y z\ng = [[1,0,0],[1,0],[1]]\n").unwrap();
        let r = rotation(&def, |q| Ok(vec![-q[1], q[0], 0.0]), &[0.2, -0.3, 0.0], 1e-3).unwrap();
        assert!((r.covariant[(0, 1)] - 2.0).abs() < 1e-9);
        assert!((r.exterior[(0, 1)] - 2.0).abs() < 1e-9);
    }
}
