//! Decision procedures for conformally Einstein structure.
//!
//! Sign conventions (checked numerically by [`cspace_transform_check`]):
//!
//! * for `ḡ = e^{2φ} g` the divergence transforms as
//!   `δ̄W̄ = δW + (n−3) W(·,·,·,∇φ)`;
//! * a field `V` is the gradient `∇ψ` of a conformal factor making
//!   `e^{2ψ} g` Einstein exactly when `rot V = 0` and
//!   `Ric° + (n−2) F_{−V} = 0`, i.e. `Ric° = (n−2)(∇V − V⊗V)°`.
//!
//! Every candidate field produced here is in that gauge: Listing's solution,
//! `H + fξ` for rank one and `H/k + Σ f_r ξ_r` in general.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::corpus::conformal_rescale;
use crate::curvature::{bundle_at, covariant_vector_derivative, f_v_tensor, CurvatureBundle, CurvatureError};
use crate::expr::Expr;
use crate::frame::{
    contact_invariants, degeneracy_survey, field_derivative, frobenius_transversal_jet, kappa_nullity_residual, kernel_at,
    kernel_rotation, mean_curvature_field, mean_curvature_jet, transversal_derivatives, DegeneracyReport, ExceptionalPoint,
    FrameConfig, FrameError, FrameField, KernelFrame,
};
use crate::linalg::{g_dot, lstsq, orthonormal_frame, procrustes, row_and_null_space};
use crate::metric::{MetricDefinition, MetricError};
use crate::sample::{map_indices, Sampler};

/// Rotation pairs with `|dη(E_i,E_j)|` below this fraction of the largest
/// are not used to solve for `f`.
pub const ADMISSIBLE_FRACTION: f64 = 0.05;
/// Below this, `dη` counts as identically zero on transversal pairs.
pub const ROTATION_FLOOR: f64 = 1e-6;
/// Transversal defect at or below which a sample counts as integrable.
pub const INTEGRABLE_TOL: f64 = 1e-6;
/// Transversal defect above which a sample counts as non-integrable.
pub const NON_INTEGRABLE_TOL: f64 = 1e-3;
/// Verdict thresholds on per-sample residuals.
pub const ACCEPT_MAX: f64 = 1e-3;
pub const ACCEPT_MEDIAN: f64 = 1e-4;
pub const REJECT: f64 = 1e-2;
/// Relative rank threshold for the staged linear systems.
pub const STAGE_RANK_TOL: f64 = 1e-6;
/// Relative tolerance on the Einstein scaling sign.
pub const SCALING_TOL: f64 = 1e-6;
/// Threshold for the product-split mixed curvature check.
pub const PRODUCT_TOL: f64 = 1e-6;
/// Threshold for each Sasaki condition.
pub const SASAKI_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectError {
    #[error("no transversal pair with non-zero dη (max |dη| = {max_rotation:e}); the kernel is transversally integrable")]
    NoAdmissiblePair { max_rotation: f64 },
    #[error("Ω vanishes on all transversal pairs; contradicts transversal non-integrability")]
    RankZeroOmega,
    #[error("the staged system reached its differential tail stage")]
    PdeStage,
    #[error("kernel rank {found}, expected {expected}")]
    RankMismatch { expected: usize, found: usize },
    #[error("kernel rank {0}, expected 1")]
    RankNotOne(usize),
    #[error("residual is not finite")]
    NonFinite,
    #[error("dimension {0} is not odd and at least 5")]
    EvenDimension(usize),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

impl From<CurvatureError> for DetectError {
    fn from(e: CurvatureError) -> Self {
        DetectError::Frame(FrameError::Curvature(e))
    }
}

impl From<MetricError> for DetectError {
    fn from(e: MetricError) -> Self {
        DetectError::Frame(e.into())
    }
}

// ---------------------------------------------------------------------------
// Candidate fields

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Listing,
    Rank1,
    Rankk,
    /// A field supplied by the caller (trial fields, perturbations, ...).
    Given,
}

/// `f` implied by one transversal pair.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct PairValue {
    pub i: usize,
    pub j: usize,
    pub omega: f64,
    pub f: f64,
}

/// A candidate evaluated at one point.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CandidatePoint {
    pub point: Vec<f64>,
    pub v: Vec<f64>,
    /// Coefficients of the kernel vectors (empty for Listing).
    pub f_coeffs: Vec<f64>,
    pub consistency_spread: f64,
    /// Per-pair values (rank one only).
    pub pairs: Vec<PairValue>,
    /// Post-solve residual of the linear system.
    pub solve_residual: f64,
}

pub type FieldFn<'a> = Arc<dyn Fn(&[f64]) -> Result<Vec<f64>, DetectError> + Send + Sync + 'a>;

/// A pointwise-evaluable vector field proposed as `∇ψ`.
#[derive(Clone)]
pub struct CandidateField<'a> {
    pub route: Route,
    v: FieldFn<'a>,
    /// Nesting depth of finite differences inside one evaluation; the
    /// verifier differentiates with a step `10^depth` times the base step.
    pub fd_depth: u32,
    /// The candidate at the point where it was constructed.
    pub base: Option<CandidatePoint>,
}

impl std::fmt::Debug for CandidateField<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CandidateField")
            .field("route", &self.route)
            .field("fd_depth", &self.fd_depth)
            .field("base", &self.base)
            .finish()
    }
}

impl<'a> CandidateField<'a> {
    pub fn given<F>(fd_depth: u32, f: F) -> Self
    where
        F: Fn(&[f64]) -> Result<Vec<f64>, DetectError> + Send + Sync + 'a,
    {
        CandidateField {
            route: Route::Given,
            v: Arc::new(f),
            fd_depth,
            base: None,
        }
    }

    pub fn zero(n: usize) -> Self {
        Self::given(0, move |_| Ok(vec![0.0; n]))
    }

    pub fn eval(&self, q: &[f64]) -> Result<Vec<f64>, DetectError> {
        (self.v)(q)
    }

    /// The same field plus a constant chart vector (keeps the route label).
    pub fn perturbed(&self, delta: Vec<f64>) -> Self {
        let inner = self.v.clone();
        CandidateField {
            route: self.route,
            v: Arc::new(move |q| {
                let mut v = inner(q)?;
                v.iter_mut().zip(&delta).for_each(|(a, b)| *a += b);
                Ok(v)
            }),
            fd_depth: self.fd_depth,
            base: None,
        }
    }
}

fn onb_coords(b: &CurvatureBundle, e: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|i| (0..n).map(|a| e[(a, i)] * (0..n).map(|c| b.g[(a, c)] * v[c]).sum::<f64>()).sum())
        .collect()
}

fn rot_matrix(b: &CurvatureBundle, v: &[f64], dv: &DMatrix<f64>) -> DMatrix<f64> {
    let nabla = covariant_vector_derivative(&b.gamma, v, dv);
    let gn = &nabla * &b.g;
    &gn - gn.transpose()
}

fn bilinear(m: &DMatrix<f64>, x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for a in 0..n {
        for c in 0..n {
            s += m[(a, c)] * x[a] * y[c];
        }
    }
    s
}

// ---------------------------------------------------------------------------
// Listing (rank 0)

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ListingSolution {
    pub x: Vec<f64>,
    pub residual: f64,
    pub unique: bool,
}

/// Least-squares solution of `(n−3) W(·,·,·,X) = −δW`.
pub fn listing_at(b: &CurvatureBundle, cfg: &FrameConfig) -> ListingSolution {
    let n = b.dim();
    let e = orthonormal_frame(&b.g).expect("positive definite");
    let w = b.weyl.in_frame(&e);
    let dw = b.weyl_div.in_frame(&e);
    let n3 = n * n * n;
    let c = (n as f64) - 3.0;
    let a = DMatrix::from_fn(n3, n, |r, l| c * w.data()[r * n + l]);
    let rhs = DVector::from_fn(n3, |r, _| -dw.data()[r]);
    let sol = lstsq(&a, &rhs, 1e-12);
    let residual = (&a * &sol - &rhs).norm();
    let x: Vec<f64> = (&e * &sol).iter().copied().collect();
    let unique = crate::frame::weyl_kernel(b, cfg).rank_k == 0;
    ListingSolution { x, residual, unique }
}

pub fn listing_candidate(def: &MetricDefinition, p: &[f64]) -> Result<ListingSolution, DetectError> {
    let b = bundle_at(def, p)?;
    Ok(listing_at(&b, &FrameConfig::default()))
}

/// Listing's solution as a field.
pub fn listing_field<'a>(def: &'a MetricDefinition, p: &[f64], cfg: &FrameConfig) -> Result<CandidateField<'a>, DetectError> {
    let cfg = *cfg;
    let base = {
        let b = bundle_at(def, p)?;
        let s = listing_at(&b, &cfg);
        CandidatePoint {
            point: p.to_vec(),
            v: s.x,
            f_coeffs: Vec::new(),
            consistency_spread: 0.0,
            pairs: Vec::new(),
            solve_residual: s.residual,
        }
    };
    Ok(CandidateField {
        route: Route::Listing,
        v: Arc::new(move |q| {
            let b = bundle_at(def, q)?;
            Ok(listing_at(&b, &cfg).x)
        }),
        fd_depth: 0,
        base: Some(base),
    })
}

// ---------------------------------------------------------------------------
// Rank one (transversally non-integrable)

fn mean_curvature_rotation(def: &MetricDefinition, b: &CurvatureBundle, h: &[f64], k: usize, cfg: &FrameConfig) -> Result<DMatrix<f64>, DetectError> {
    let dh = field_derivative(|x| mean_curvature_field(def, x, k, cfg), &b.point, cfg.step)?;
    Ok(rot_matrix(b, h, &dh.matrix()))
}

/// `f` and `V = H + fξ` at one point from every admissible transversal pair.
pub fn rank1_at(def: &MetricDefinition, q: &[f64], cfg: &FrameConfig) -> Result<CandidatePoint, DetectError> {
    let (b, frame) = kernel_at(def, q, cfg)?;
    if frame.rank_k != 1 {
        return Err(DetectError::RankMismatch {
            expected: 1,
            found: frame.rank_k,
        });
    }
    rank1_from_frame(def, &b, &frame, cfg)
}

fn rank1_from_frame(def: &MetricDefinition, b: &CurvatureBundle, frame: &KernelFrame, cfg: &FrameConfig) -> Result<CandidatePoint, DetectError> {
    let t = transversal_derivatives(b, frame);
    let e = &frame.transversal;
    let m = e.len();
    let mut omegas = Vec::new();
    for i in 0..m {
        for j in i + 1..m {
            omegas.push((i, j, kernel_rotation(&b.g, &t, 0, &e[i], &e[j])));
        }
    }
    let max_omega = omegas.iter().map(|x| x.2.abs()).fold(0.0, f64::max);
    if max_omega < ROTATION_FLOOR {
        return Err(DetectError::NoAdmissiblePair { max_rotation: max_omega });
    }
    let h = mean_curvature_jet(b, frame).h_vec;
    let roth = mean_curvature_rotation(def, b, &h, 1, cfg)?;
    let mut pairs = Vec::new();
    let (mut num, mut den) = (0.0, 0.0);
    for &(i, j, om) in &omegas {
        if om.abs() < ADMISSIBLE_FRACTION * max_omega {
            continue;
        }
        let rh = bilinear(&roth, &e[i], &e[j]);
        num -= om * rh;
        den += om * om;
        pairs.push(PairValue { i, j, omega: om, f: -rh / om });
    }
    let f = num / den;
    let lo = pairs.iter().map(|p| p.f).fold(f64::INFINITY, f64::min);
    let hi = pairs.iter().map(|p| p.f).fold(f64::NEG_INFINITY, f64::max);
    let solve_residual = omegas
        .iter()
        .map(|&(i, j, om)| (bilinear(&roth, &e[i], &e[j]) + f * om).abs())
        .fold(0.0, f64::max);
    let v = h.iter().zip(&frame.xi[0]).map(|(a, x)| a + f * x).collect();
    Ok(CandidatePoint {
        point: b.point.clone(),
        v,
        f_coeffs: vec![f],
        consistency_spread: hi - lo,
        pairs,
        solve_residual,
    })
}

/// The rank-one candidate `V = H + fξ` as a field.
pub fn rank1_candidate<'a>(def: &'a MetricDefinition, frame: &KernelFrame, p: &[f64], cfg: &FrameConfig) -> Result<CandidateField<'a>, DetectError> {
    if frame.rank_k != 1 {
        return Err(DetectError::RankMismatch {
            expected: 1,
            found: frame.rank_k,
        });
    }
    let b = bundle_at(def, p)?;
    let base = rank1_from_frame(def, &b, frame, cfg)?;
    let cfg = *cfg;
    Ok(CandidateField {
        route: Route::Rank1,
        v: Arc::new(move |q| Ok(rank1_at(def, q, &cfg)?.v)),
        fd_depth: 1,
        base: Some(base),
    })
}

// ---------------------------------------------------------------------------
// Rank k: staged linear systems

/// Progress through the staged systems. Kernel vectors are re-expressed as
/// `ξ″_s = Σ_r basis[(r, s)] ξ_r`; the first `determined.len()` coefficients
/// (in that basis) are known.
#[derive(Debug, Clone, PartialEq)]
pub struct StageState {
    pub basis: DMatrix<f64>,
    pub determined: Vec<f64>,
    /// Numerical rank found at each completed stage.
    pub ranks: Vec<usize>,
    /// Largest singular value of the first stage, used as the zero reference
    /// for later stages.
    pub scale: f64,
}

impl StageState {
    pub fn initial(k: usize) -> Self {
        StageState {
            basis: DMatrix::identity(k, k),
            determined: Vec::new(),
            ranks: Vec::new(),
            scale: 0.0,
        }
    }

    pub fn stage(&self) -> usize {
        self.ranks.len()
    }

    pub fn determined_count(&self) -> usize {
        self.determined.len()
    }

    /// Known part of the coefficients in the original kernel basis.
    pub fn determined_in_xi(&self) -> DVector<f64> {
        let k = self.basis.nrows();
        let mut f = DVector::zeros(k);
        for (s, c) in self.determined.iter().enumerate() {
            f += self.basis.column(s) * *c;
        }
        f
    }
}

/// One stage: rows `[rot(ξ″_s)(X,Y)]` for the undetermined `s`, and the
/// right-hand side `−rot(H″)(X,Y)`, over the admissible pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSystem {
    pub omega: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

/// Source of stage systems: the geometry at a point, or a synthetic model.
pub trait StageOracle {
    fn kernel_rank(&self) -> usize;
    fn stage(&self, state: &StageState) -> Result<StageSystem, DetectError>;
    /// The matrix `Ω*` of rotations of the undetermined fields paired with
    /// themselves and everything else, assembled when the linear stages
    /// run out.
    fn tail_matrix(&self, state: &StageState) -> Result<DMatrix<f64>, DetectError>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum Advance {
    Solved {
        /// All coefficients in the original kernel basis.
        coeffs: DVector<f64>,
        spread: f64,
        residual: f64,
        state: StageState,
    },
    Continue(StageState),
    Tail(StageState),
}

fn numerical_rank(sv: &[f64], reference: f64) -> usize {
    let thr = STAGE_RANK_TOL * reference;
    sv.iter().filter(|&&s| s > thr).count()
}

fn row_spread(omega: &DMatrix<f64>, rhs: &DVector<f64>, x: &DVector<f64>) -> (f64, f64) {
    let res = omega * x - rhs;
    let norms: Vec<f64> = (0..omega.nrows()).map(|r| omega.row(r).norm()).collect();
    let top = norms.iter().cloned().fold(0.0, f64::max);
    let mut spread: f64 = 0.0;
    for (r, nr) in norms.iter().enumerate() {
        if *nr >= ADMISSIBLE_FRACTION * top && *nr > 0.0 {
            spread = spread.max(res[r].abs() / nr);
        }
    }
    (spread, res.amax())
}

/// Runs one stage of the procedure.
pub fn advance(oracle: &dyn StageOracle, state: &StageState) -> Result<Advance, DetectError> {
    let k = oracle.kernel_rank();
    let d = state.determined_count();
    let sys = oracle.stage(state)?;
    let free = k - d;
    let sv: Vec<f64> = if sys.omega.nrows() == 0 {
        vec![0.0; free]
    } else {
        sys.omega.singular_values().iter().copied().collect()
    };
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let reference = if state.stage() == 0 { smax.max(ROTATION_FLOOR / STAGE_RANK_TOL) } else { state.scale };
    // Below the absolute floor the first stage counts as zero outright.
    let reference = if state.stage() == 0 && smax < ROTATION_FLOOR { f64::INFINITY } else { reference };
    let r = numerical_rank(&sv, reference).min(free);
    let mut next = state.clone();
    next.ranks.push(r);
    if state.stage() == 0 {
        next.scale = smax;
    }
    if r == 0 {
        if state.stage() == 0 {
            return Err(DetectError::RankZeroOmega);
        }
        return Ok(Advance::Tail(next));
    }
    if r == free {
        let g = lstsq(&sys.omega, &sys.rhs, 1e-12);
        let (spread, residual) = row_spread(&sys.omega, &sys.rhs, &g);
        next.determined.extend(g.iter());
        let coeffs = next.determined_in_xi();
        return Ok(Advance::Solved {
            coeffs,
            spread,
            residual,
            state: next,
        });
    }
    // Split the undetermined block into row space (solvable now) and null
    // space (left for the next stage).
    let (row, null) = row_and_null_space(&sys.omega, r);
    let rot = {
        let mut m = DMatrix::zeros(free, free);
        m.view_mut((0, 0), (free, r)).copy_from(&row);
        m.view_mut((0, r), (free, free - r)).copy_from(&null);
        m
    };
    let tail = state.basis.columns(d, free) * &rot;
    next.basis.view_mut((0, d), (k, free)).copy_from(&tail);
    let reduced = &sys.omega * &row;
    let g = lstsq(&reduced, &sys.rhs, 1e-12);
    next.determined.extend(g.iter());
    Ok(Advance::Continue(next))
}

/// Result of the full staged procedure.
#[derive(Debug, Clone, PartialEq)]
pub enum StageOutcome {
    Solved {
        coeffs: DVector<f64>,
        spread: f64,
        residual: f64,
        ranks: Vec<usize>,
    },
    UndeterminedPde {
        omega_star: DMatrix<f64>,
        determined: usize,
        ranks: Vec<usize>,
    },
}

pub fn solve_stages(oracle: &dyn StageOracle) -> Result<StageOutcome, DetectError> {
    let mut state = StageState::initial(oracle.kernel_rank());
    loop {
        match advance(oracle, &state)? {
            Advance::Solved {
                coeffs,
                spread,
                residual,
                state,
            } => {
                return Ok(StageOutcome::Solved {
                    coeffs,
                    spread,
                    residual,
                    ranks: state.ranks,
                })
            }
            Advance::Continue(s) => state = s,
            Advance::Tail(s) => {
                let omega_star = oracle.tail_matrix(&s)?;
                return Ok(StageOutcome::UndeterminedPde {
                    omega_star,
                    determined: s.determined_count(),
                    ranks: s.ranks,
                });
            }
        }
    }
}

/// Pointwise linear model of the stages in an orthonormal frame whose first
/// `k` vectors are the kernel vectors: `rot_xi[r]` is the antisymmetric
/// matrix of `rot(ξ_r)` and `rot_base` that of `rot(H/k)`. Derivatives of
/// the basis change and of determined coefficients are taken to vanish.
#[derive(Debug, Clone)]
pub struct LinearStageModel {
    pub n: usize,
    pub k: usize,
    pub rot_xi: Vec<DMatrix<f64>>,
    pub rot_base: DMatrix<f64>,
}

impl LinearStageModel {
    fn kernel_vector(&self, state: &StageState, s: usize) -> DVector<f64> {
        let mut v = DVector::zeros(self.n);
        v.rows_mut(0, self.k).copy_from(&state.basis.column(s));
        v
    }

    fn rot_combined(&self, state: &StageState, s: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for r in 0..self.k {
            m += &self.rot_xi[r] * state.basis[(r, s)];
        }
        m
    }

    /// Orthonormal vectors orthogonal to every undetermined kernel vector.
    fn allowed(&self, state: &StageState) -> Vec<DVector<f64>> {
        let mut out: Vec<DVector<f64>> = (0..state.determined_count()).map(|s| self.kernel_vector(state, s)).collect();
        for j in self.k..self.n {
            let mut e = DVector::zeros(self.n);
            e[j] = 1.0;
            out.push(e);
        }
        out
    }
}

impl StageOracle for LinearStageModel {
    fn kernel_rank(&self) -> usize {
        self.k
    }

    fn stage(&self, state: &StageState) -> Result<StageSystem, DetectError> {
        let d = state.determined_count();
        let allowed = self.allowed(state);
        let rots: Vec<DMatrix<f64>> = (0..self.k).map(|s| self.rot_combined(state, s)).collect();
        let mut known = self.rot_base.clone();
        for (s, c) in state.determined.iter().enumerate() {
            known += &rots[s] * *c;
        }
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for a in 0..allowed.len() {
            for b in a + 1..allowed.len() {
                let (x, y) = (&allowed[a], &allowed[b]);
                rows.push((d..self.k).map(|s| x.dot(&(&rots[s] * y))).collect::<Vec<f64>>());
                rhs.push(-x.dot(&(&known * y)));
            }
        }
        Ok(StageSystem {
            omega: DMatrix::from_fn(rows.len(), self.k - d, |r, c| rows[r][c]),
            rhs: DVector::from_vec(rhs),
        })
    }

    fn tail_matrix(&self, state: &StageState) -> Result<DMatrix<f64>, DetectError> {
        let d = state.determined_count();
        let rots: Vec<DMatrix<f64>> = (0..self.k).map(|s| self.rot_combined(state, s)).collect();
        let mut all: Vec<DVector<f64>> = (0..self.k).map(|s| self.kernel_vector(state, s)).collect();
        for j in self.k..self.n {
            let mut e = DVector::zeros(self.n);
            e[j] = 1.0;
            all.push(e);
        }
        let mut rows = Vec::new();
        for i in d..self.k {
            for (yi, y) in all.iter().enumerate() {
                if yi == i {
                    continue;
                }
                let x = &all[i];
                rows.push((d..self.k).map(|s| x.dot(&(&rots[s] * y))).collect::<Vec<f64>>());
            }
        }
        Ok(DMatrix::from_fn(rows.len(), self.k - d, |r, c| rows[r][c]))
    }
}

/// The stages computed from the metric at a point. Later stages
/// differentiate the earlier stages' fields by nested finite differences,
/// the step growing tenfold per level.
pub struct GeometricStages<'a> {
    pub def: &'a MetricDefinition,
    pub cfg: FrameConfig,
    pub point: Vec<f64>,
    /// Kernel vectors the local frames are aligned to.
    pub reference: Vec<Vec<f64>>,
    bundle: CurvatureBundle,
    frame: KernelFrame,
}

impl<'a> GeometricStages<'a> {
    pub fn new(def: &'a MetricDefinition, p: &[f64], reference: Option<&[Vec<f64>]>, cfg: &FrameConfig) -> Result<Self, DetectError> {
        let (bundle, mut frame) = kernel_at(def, p, cfg)?;
        let reference = match reference {
            Some(r) => {
                if frame.rank_k != r.len() {
                    return Err(DetectError::RankMismatch {
                        expected: r.len(),
                        found: frame.rank_k,
                    });
                }
                let ff = FrameField {
                    def,
                    reference: r.to_vec(),
                    kernel_rank: r.len(),
                    transversal: false,
                    cfg: *cfg,
                };
                frame.xi = ff.at(p)?;
                r.to_vec()
            }
            None => frame.xi.clone(),
        };
        Ok(GeometricStages {
            def,
            cfg: *cfg,
            point: p.to_vec(),
            reference,
            bundle,
            frame,
        })
    }

    pub fn frame(&self) -> &KernelFrame {
        &self.frame
    }

    fn k(&self) -> usize {
        self.frame.rank_k
    }

    fn mean_curvature(&self) -> Vec<f64> {
        mean_curvature_jet(&self.bundle, &self.frame).h_vec
    }

    fn combine(&self, coeffs: &DVector<f64>) -> Vec<f64> {
        let n = self.bundle.dim();
        (0..n).map(|c| (0..self.k()).map(|r| coeffs[r] * self.frame.xi[r][c]).sum()).collect()
    }

    /// `V = H/k + Σ f_r ξ_r` for coefficients in the local kernel basis.
    pub fn field_value(&self, coeffs: &DVector<f64>) -> Vec<f64> {
        let k = self.k() as f64;
        self.mean_curvature()
            .iter()
            .zip(self.combine(coeffs))
            .map(|(h, f)| h / k + f)
            .collect()
    }

    /// `A = H/k + Σ F_r ξ_r` (determined part) and `B_s = Σ_r N_rs ξ_r`
    /// (undetermined directions), flattened.
    fn stage_fields(&self, state: &StageState, null_reference: &DMatrix<f64>) -> Vec<f64> {
        let d = state.determined_count();
        let k = self.k();
        let mut out = self.field_value(&state.determined_in_xi());
        let mut null = state.basis.columns(d, k - d).into_owned();
        if k > d {
            let r = procrustes(&null, null_reference);
            null = null * r;
        }
        for s in 0..k - d {
            out.extend(self.combine(&null.column(s).into_owned()));
        }
        out
    }

    /// Chart rotation matrices of `A` and every `B_s` at the point.
    fn stage_rotations(&self, state: &StageState) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>), DetectError> {
        let c = state.stage();
        let n = self.bundle.dim();
        let d = state.determined_count();
        let k = self.k();
        let null_ref = state.basis.columns(d, k - d).into_owned();
        let rerun = |q: &[f64]| -> Result<Vec<f64>, FrameError> {
            let local = GeometricStages::new(self.def, q, Some(&self.frame.xi), &self.cfg).map_err(to_frame_error)?;
            let mut st = StageState::initial(k);
            for _ in 0..c {
                match advance(&local, &st).map_err(to_frame_error)? {
                    Advance::Continue(s) | Advance::Tail(s) => st = s,
                    Advance::Solved { state, .. } => st = state,
                }
            }
            if st.determined_count() != d {
                return Err(FrameError::RankDrift {
                    expected: d,
                    found: st.determined_count(),
                    point: q.to_vec(),
                });
            }
            Ok(local.stage_fields(&st, &null_ref))
        };
        let h = self.cfg.step * 10f64.powi(c as i32);
        let center = self.stage_fields(state, &null_ref);
        let dv = field_derivative(rerun, &self.point, h)?.matrix();
        let block = |i: usize| -> DMatrix<f64> {
            let v = &center[i * n..(i + 1) * n];
            let dm = dv.columns(i * n, n).into_owned();
            rot_matrix(&self.bundle, v, &dm)
        };
        let rot_a = block(0);
        let rot_b = (0..k - d).map(|s| block(1 + s)).collect();
        Ok((rot_a, rot_b))
    }

    fn kernel_vector(&self, state: &StageState, s: usize) -> Vec<f64> {
        self.combine(&state.basis.column(s).into_owned())
    }
}

fn to_frame_error(e: DetectError) -> FrameError {
    match e {
        DetectError::Frame(f) => f,
        other => FrameError::Field(other.to_string()),
    }
}

impl StageOracle for GeometricStages<'_> {
    fn kernel_rank(&self) -> usize {
        self.k()
    }

    fn stage(&self, state: &StageState) -> Result<StageSystem, DetectError> {
        let k = self.k();
        let d = state.determined_count();
        let e = &self.frame.transversal;
        let g = &self.bundle.g;
        if state.stage() == 0 {
            // Transversal pairs only: the kernel rotations come from jets.
            let t = transversal_derivatives(&self.bundle, &self.frame);
            let roth = mean_curvature_rotation(self.def, &self.bundle, &self.mean_curvature(), k, &self.cfg)?;
            let mut rows = Vec::new();
            let mut rhs = Vec::new();
            for a in 0..e.len() {
                for b in a + 1..e.len() {
                    let per_xi: Vec<f64> = (0..k).map(|r| kernel_rotation(g, &t, r, &e[a], &e[b])).collect();
                    rows.push((0..k).map(|s| (0..k).map(|r| state.basis[(r, s)] * per_xi[r]).sum()).collect::<Vec<f64>>());
                    rhs.push(-bilinear(&roth, &e[a], &e[b]) / k as f64);
                }
            }
            return Ok(StageSystem {
                omega: DMatrix::from_fn(rows.len(), k, |r, c| rows[r][c]),
                rhs: DVector::from_vec(rhs),
            });
        }
        let (rot_a, rot_b) = self.stage_rotations(state)?;
        let mut allowed: Vec<Vec<f64>> = (0..d).map(|s| self.kernel_vector(state, s)).collect();
        allowed.extend(e.iter().cloned());
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for a in 0..allowed.len() {
            for b in a + 1..allowed.len() {
                let (x, y) = (&allowed[a], &allowed[b]);
                rows.push(rot_b.iter().map(|m| bilinear(m, x, y)).collect::<Vec<f64>>());
                rhs.push(-bilinear(&rot_a, x, y));
            }
        }
        Ok(StageSystem {
            omega: DMatrix::from_fn(rows.len(), k - d, |r, c| rows[r][c]),
            rhs: DVector::from_vec(rhs),
        })
    }

    fn tail_matrix(&self, state: &StageState) -> Result<DMatrix<f64>, DetectError> {
        let k = self.k();
        let d = state.determined_count();
        let (_, rot_b) = self.stage_rotations(state)?;
        let mut all: Vec<Vec<f64>> = (0..k).map(|s| self.kernel_vector(state, s)).collect();
        all.extend(self.frame.transversal.iter().cloned());
        let mut rows = Vec::new();
        for i in d..k {
            for (yi, y) in all.iter().enumerate() {
                if yi != i {
                    rows.push(rot_b.iter().map(|m| bilinear(m, &all[i], y)).collect::<Vec<f64>>());
                }
            }
        }
        Ok(DMatrix::from_fn(rows.len(), k - d, |r, c| rows[r][c]))
    }
}

/// `Ω*` of the differential tail stage, for inspection.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct PdeStage {
    pub omega_star: Vec<Vec<f64>>,
    pub column_rank: usize,
    pub determined: usize,
    pub stage_ranks: Vec<usize>,
}

impl PdeStage {
    fn from_matrix(m: &DMatrix<f64>, determined: usize, stage_ranks: Vec<usize>) -> Self {
        let sv: Vec<f64> = m.singular_values().iter().copied().collect();
        let smax = sv.iter().cloned().fold(0.0, f64::max);
        let column_rank = if smax < ROTATION_FLOOR { 0 } else { numerical_rank(&sv, smax) };
        PdeStage {
            omega_star: (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect(),
            column_rank,
            determined,
            stage_ranks,
        }
    }
}

pub fn stage_outcome_pde(outcome: &StageOutcome) -> Option<PdeStage> {
    match outcome {
        StageOutcome::UndeterminedPde {
            omega_star,
            determined,
            ranks,
        } => Some(PdeStage::from_matrix(omega_star, *determined, ranks.clone())),
        _ => None,
    }
}

#[derive(Debug, Clone)]
pub enum RankKOutcome<'a> {
    Candidate(CandidateField<'a>),
    UndeterminedPde(PdeStage),
}

fn rank_k_point(def: &MetricDefinition, q: &[f64], cfg: &FrameConfig) -> Result<(CandidatePoint, usize), DetectError> {
    let oracle = GeometricStages::new(def, q, None, cfg)?;
    match solve_stages(&oracle)? {
        StageOutcome::Solved {
            coeffs,
            spread,
            residual,
            ranks,
        } => Ok((
            CandidatePoint {
                point: q.to_vec(),
                v: oracle.field_value(&coeffs),
                f_coeffs: coeffs.iter().copied().collect(),
                consistency_spread: spread,
                pairs: Vec::new(),
                solve_residual: residual,
            },
            ranks.len(),
        )),
        StageOutcome::UndeterminedPde { .. } => Err(DetectError::PdeStage),
    }
}

/// Candidate `V = H/k + Σ f_r ξ_r` from the staged linear systems.
pub fn rank_k_candidate<'a>(def: &'a MetricDefinition, frame: &KernelFrame, p: &[f64], cfg: &FrameConfig) -> Result<RankKOutcome<'a>, DetectError> {
    let oracle = GeometricStages::new(def, p, Some(&frame.xi), cfg)?;
    match solve_stages(&oracle)? {
        StageOutcome::UndeterminedPde {
            omega_star,
            determined,
            ranks,
        } => Ok(RankKOutcome::UndeterminedPde(PdeStage::from_matrix(&omega_star, determined, ranks))),
        StageOutcome::Solved {
            coeffs,
            spread,
            residual,
            ranks,
        } => {
            let base = CandidatePoint {
                point: p.to_vec(),
                v: oracle.field_value(&coeffs),
                f_coeffs: coeffs.iter().copied().collect(),
                consistency_spread: spread,
                pairs: Vec::new(),
                solve_residual: residual,
            };
            let cfg = *cfg;
            Ok(RankKOutcome::Candidate(CandidateField {
                route: Route::Rankk,
                v: Arc::new(move |q| Ok(rank_k_point(def, q, &cfg)?.0.v)),
                fd_depth: ranks.len() as u32,
                base: Some(base),
            }))
        }
    }
}

// ---------------------------------------------------------------------------
// Verification

/// Residuals of one candidate at one sample.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SampleResidual {
    pub index: usize,
    pub point: Vec<f64>,
    /// `max |Ric° + (n−2) F_{−V}|` on an orthonormal frame.
    pub einstein: f64,
    /// `max |rot V|` on an orthonormal frame.
    pub rot: f64,
    /// `τ − 2(n−1) div V − (n−1)(n−2)|V|²`, the sign of the Einstein
    /// constant of `e^{2ψ}g`.
    pub scaling: f64,
    pub tau: f64,
    pub derivative_error: f64,
}

pub fn residual_at(def: &MetricDefinition, cand: &CandidateField<'_>, p: &[f64], cfg: &FrameConfig) -> Result<(f64, f64, f64, f64, f64), DetectError> {
    let b = bundle_at(def, p)?;
    let n = b.dim();
    let v = cand.eval(p)?;
    let h = cfg.step * 10f64.powi(cand.fd_depth as i32);
    let d = field_derivative(
        |q| {
            cand.eval(q).map_err(to_frame_error)
        },
        p,
        h,
    )?;
    let nabla = covariant_vector_derivative(&b.gamma, &v, &d.matrix());
    let neg_v: Vec<f64> = v.iter().map(|x| -x).collect();
    let f = f_v_tensor(&b.g, &neg_v, &(-&nabla))?;
    let nf = n as f64;
    let res = b.ricci_traceless.to_matrix() + f * (nf - 2.0);
    let e = orthonormal_frame(&b.g).expect("positive definite");
    let einstein = (e.transpose() * res * &e).amax();
    let gn = &nabla * &b.g;
    let rot = (e.transpose() * (&gn - gn.transpose()) * &e).amax();
    let div: f64 = (0..n).map(|a| nabla[(a, a)]).sum();
    let vv = g_dot(&b.g, &v, &v);
    let scaling = b.tau - 2.0 * (nf - 1.0) * div - (nf - 1.0) * (nf - 2.0) * vv;
    if !(einstein.is_finite() && rot.is_finite() && scaling.is_finite()) {
        return Err(DetectError::NonFinite);
    }
    Ok((einstein, rot, scaling, b.tau, d.error))
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Verification {
    pub samples: Vec<SampleResidual>,
    pub failures: Vec<ExceptionalPoint>,
    pub einstein_max: f64,
    pub rot_max: f64,
    pub einstein_median: f64,
    pub rot_median: f64,
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

impl Verification {
    fn from_parts(samples: Vec<SampleResidual>, failures: Vec<ExceptionalPoint>) -> Self {
        let e: Vec<f64> = samples.iter().map(|s| s.einstein).collect();
        let r: Vec<f64> = samples.iter().map(|s| s.rot).collect();
        let max = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().cloned().fold(0.0, f64::max) };
        Verification {
            einstein_max: max(&e),
            rot_max: max(&r),
            einstein_median: median(&e),
            rot_median: median(&r),
            samples,
            failures,
        }
    }

    /// Verdict by the residual thresholds.
    pub fn verdict(&self) -> Verdict {
        if self.samples.is_empty() {
            return Verdict::Undetermined;
        }
        let worst = self.einstein_max.max(self.rot_max);
        if worst > REJECT {
            Verdict::NotConformallyEinstein
        } else if worst <= ACCEPT_MAX && self.einstein_median.max(self.rot_median) <= ACCEPT_MEDIAN {
            Verdict::ConformallyEinstein
        } else {
            Verdict::Undetermined
        }
    }

    pub fn scaling_sign(&self) -> ScalingSign {
        if self.samples.is_empty() {
            return ScalingSign::Unknown;
        }
        let tol = |s: &SampleResidual| SCALING_TOL * (1.0 + s.tau.abs());
        if self.samples.iter().all(|s| s.scaling.abs() <= tol(s)) {
            ScalingSign::Zero
        } else if self.samples.iter().all(|s| s.scaling > tol(s)) {
            ScalingSign::Positive
        } else if self.samples.iter().all(|s| s.scaling < -tol(s)) {
            ScalingSign::Negative
        } else {
            ScalingSign::Unknown
        }
    }
}

/// Residuals at the given `(index, point)` samples; failing samples are
/// recorded, not propagated.
pub fn verify_points(def: &MetricDefinition, cand: &CandidateField<'_>, points: &[(usize, Vec<f64>)], cfg: &FrameConfig) -> Verification {
    let results = map_indices(points.len(), |i| residual_at(def, cand, &points[i].1, cfg));
    let mut samples = Vec::new();
    let mut failures = Vec::new();
    for ((index, point), r) in points.iter().zip(results) {
        match r {
            Ok((einstein, rot, scaling, tau, derivative_error)) => samples.push(SampleResidual {
                index: *index,
                point: point.clone(),
                einstein,
                rot,
                scaling,
                tau,
                derivative_error,
            }),
            Err(e) => failures.push(ExceptionalPoint {
                index: *index,
                point: point.clone(),
                rank: None,
                reason: format!("verification failed: {e}"),
            }),
        }
    }
    Verification::from_parts(samples, failures)
}

/// Residuals of `Ric° + (n−2)F_{−V}` and `rot V` at `samples` seeded points.
pub fn verify_conformal_einstein(def: &MetricDefinition, cand: &CandidateField<'_>, sampler: &Sampler, samples: usize, cfg: &FrameConfig) -> Verification {
    let points: Vec<(usize, Vec<f64>)> = (0..samples).map(|i| (i, sampler.point(i))).collect();
    verify_points(def, cand, &points, cfg)
}

// ---------------------------------------------------------------------------
// Classification

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    ConformallyEinstein,
    NotConformallyEinstein,
    #[serde(rename = "Undetermined_PDE")]
    UndeterminedPde,
    #[serde(rename = "Inconclusive_NegativeScaling")]
    InconclusiveNegativeScaling,
    /// Residuals between the accept and reject thresholds, or no route
    /// applies.
    Undetermined,
}

impl Verdict {
    pub fn is_positive(self) -> bool {
        self == Verdict::ConformallyEinstein
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TransversalClass {
    Integrable,
    NonIntegrable,
    Mixed,
    /// Kernel rank 0 or n: there is no transversal distribution.
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingSign {
    Positive,
    Zero,
    Negative,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassifyConfig {
    pub samples: usize,
    pub seed: u64,
    /// Number of (non-exceptional) survey samples used for verification.
    pub verify_samples: usize,
    /// Sampling margin inside the domain hints, keeping stencils inside.
    pub margin: f64,
    pub frame: FrameConfig,
    #[serde(skip)]
    pub per_sample: bool,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            samples: 100,
            seed: 42,
            verify_samples: 20,
            margin: 0.02,
            frame: FrameConfig::default(),
            per_sample: false,
        }
    }
}

impl ClassifyConfig {
    pub fn sampler(&self, def: &MetricDefinition) -> Sampler {
        Sampler::for_metric(def, self.seed).with_margin(self.margin)
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Note {
    pub key: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

fn note(key: &str, message: impl Into<String>, value: Option<f64>) -> Note {
    Note {
        key: key.to_string(),
        message: message.into(),
        value,
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SampleRecord {
    pub index: usize,
    pub point: Vec<f64>,
    pub rank: Option<usize>,
    pub transversal_defect: Option<f64>,
    pub einstein: Option<f64>,
    pub rot: Option<f64>,
    pub scaling: Option<f64>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ClassificationReport {
    pub dim: usize,
    pub rank_k: usize,
    pub transversal_class: TransversalClass,
    pub route: Option<Route>,
    pub verdict: Verdict,
    pub einstein_residual: Option<f64>,
    pub rot_residual: Option<f64>,
    pub frobenius_residual: Option<f64>,
    /// Largest `|η∧dη|` (rank one).
    pub contact_residual: Option<f64>,
    pub scaling_sign: ScalingSign,
    pub survey: DegeneracyReport,
    /// Survey exceptions plus samples whose verification failed.
    pub exceptional_points: Vec<ExceptionalPoint>,
    pub pde_stage: Option<PdeStage>,
    pub notes: Vec<Note>,
    pub per_sample: Vec<SampleRecord>,
}

impl ClassificationReport {
    pub fn exceptional_fraction(&self) -> f64 {
        let mut idx: Vec<usize> = self.exceptional_points.iter().map(|e| e.index).collect();
        idx.sort_unstable();
        idx.dedup();
        idx.len() as f64 / self.survey.requested.max(1) as f64
    }
}

/// Transversal defect at one point: `|η∧dη|` for rank one, the Frobenius
/// defect of `Ker(W)^⊥` otherwise; plus the column rank of Ω on
/// transversal pairs.
fn transversal_defect(b: &CurvatureBundle, frame: &KernelFrame) -> (f64, usize) {
    let k = frame.rank_k;
    let t = transversal_derivatives(b, frame);
    let e = &frame.transversal;
    let mut rows = Vec::new();
    for a in 0..e.len() {
        for c in a + 1..e.len() {
            rows.push((0..k).map(|r| kernel_rotation(&b.g, &t, r, &e[a], &e[c])).collect::<Vec<f64>>());
        }
    }
    let om = DMatrix::from_fn(rows.len(), k, |r, c| rows[r][c]);
    let defect = if k == 1 { om.norm() } else { frobenius_transversal_jet(b, frame) };
    let sv: Vec<f64> = om.singular_values().iter().copied().collect();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let rank = if smax < ROTATION_FLOOR { 0 } else { numerical_rank(&sv, smax) };
    (defect, rank)
}

/// Largest Riemann component of mixed type (neither all kernel nor all
/// transversal indices) in a kernel-adapted orthonormal frame.
pub fn mixed_curvature(b: &CurvatureBundle, frame: &KernelFrame) -> f64 {
    let n = b.dim();
    let cols: Vec<&Vec<f64>> = frame.xi.iter().chain(frame.transversal.iter()).collect();
    let e = DMatrix::from_fn(n, n, |r, c| cols[c][r]);
    let r = b.riemann.in_frame(&e);
    let k = frame.rank_k;
    let mut m: f64 = 0.0;
    for (i, v) in r.data().iter().enumerate() {
        let idx = [i / (n * n * n), (i / (n * n)) % n, (i / n) % n, i % n];
        let in_kernel = idx.iter().filter(|&&x| x < k).count();
        if in_kernel != 0 && in_kernel != 4 {
            m = m.max(v.abs());
        }
    }
    m
}

/// `max |sym g(∇_{E_a} ξ_r, E_b)|`: second fundamental form of the
/// transversal distribution (zero when it is totally geodesic).
pub fn transversal_geodesic_residual(b: &CurvatureBundle, frame: &KernelFrame) -> f64 {
    let t = transversal_derivatives(b, frame);
    let e = &frame.transversal;
    let mut m: f64 = 0.0;
    for r in 0..frame.rank_k {
        for a in 0..e.len() {
            for c in a..e.len() {
                let x = g_dot(&b.g, &crate::frame::perp_covariant(&t, r, &e[a]), &e[c])
                    + g_dot(&b.g, &crate::frame::perp_covariant(&t, r, &e[c]), &e[a]);
                m = m.max(0.5 * x.abs());
            }
        }
    }
    m
}

fn records_with(records: &mut [SampleRecord], v: &Verification) {
    for s in &v.samples {
        if let Some(r) = records.iter_mut().find(|r| r.index == s.index) {
            r.einstein = Some(s.einstein);
            r.rot = Some(s.rot);
            r.scaling = Some(s.scaling);
        }
    }
}

/// The full pipeline: survey, transversal class, route, verification.
pub fn classify(def: &MetricDefinition, config: &ClassifyConfig) -> ClassificationReport {
    let cfg = config.frame;
    let n = def.dim();
    let sampler = config.sampler(def);
    let survey = degeneracy_survey(def, &sampler, config.samples, &cfg);
    let k = survey.modal_rank;
    let good: Vec<(usize, Vec<f64>)> = (0..config.samples)
        .filter(|&i| survey.ranks[i].is_some() && !survey.is_exceptional(i))
        .map(|i| (i, sampler.point(i)))
        .collect();
    let mut notes = Vec::new();
    let mut exceptional_points = survey.exceptional_points.clone();
    let mut records: Vec<SampleRecord> = (0..config.samples)
        .map(|i| SampleRecord {
            index: i,
            point: sampler.point(i),
            rank: survey.ranks[i],
            transversal_defect: None,
            einstein: None,
            rot: None,
            scaling: None,
        })
        .collect();

    // Transversal classification.
    let mut transversal_class = TransversalClass::NotApplicable;
    let mut frobenius_residual = None;
    let mut contact_residual = None;
    if k > 0 && k < n {
        let defects = map_indices(good.len(), |i| kernel_at(def, &good[i].1, &cfg).map(|(b, f)| transversal_defect(&b, &f)));
        let mut values = Vec::new();
        let mut deficient = 0;
        for ((idx, _), d) in good.iter().zip(defects) {
            if let Ok((defect, omega_rank)) = d {
                values.push(defect);
                records[*idx].transversal_defect = Some(defect);
                if omega_rank < k {
                    deficient += 1;
                }
            }
        }
        let max = values.iter().cloned().fold(0.0, f64::max);
        if k == 1 {
            contact_residual = Some(max);
        } else {
            frobenius_residual = Some(max);
        }
        transversal_class = if values.is_empty() {
            TransversalClass::Mixed
        } else if values.iter().all(|&v| v <= INTEGRABLE_TOL) {
            TransversalClass::Integrable
        } else if values.iter().all(|&v| v > NON_INTEGRABLE_TOL) {
            TransversalClass::NonIntegrable
        } else {
            TransversalClass::Mixed
        };
        if k >= 2 && transversal_class == TransversalClass::NonIntegrable && deficient > 0 {
            notes.push(note(
                "gradient_in_kernel_not_excluded",
                format!("Ω is column-rank deficient on transversal pairs at {deficient} samples; the staged solve decides"),
                None,
            ));
        }
    }

    let verify_set: Vec<(usize, Vec<f64>)> = good.iter().take(config.verify_samples).cloned().collect();
    let mut route = None;
    let mut verification: Option<Verification> = None;
    let mut pde_stage = None;
    let mut scaling_sign = ScalingSign::Unknown;
    let mut einstein_override = None;

    let verdict = if good.is_empty() {
        notes.push(note("no_samples", "no sample survived the degeneracy survey", None));
        Verdict::Undetermined
    } else if n == 3 {
        notes.push(note(
            "dimension_three",
            "the Weyl tensor vanishes identically in dimension 3; conformal flatness is governed by the Cotton tensor instead",
            None,
        ));
        Verdict::Undetermined
    } else if k == n {
        // Vanishing Weyl tensor: locally conformally flat.
        let w = map_indices(verify_set.len(), |i| bundle_at(def, &verify_set[i].1).map(|b| b.weyl.max_abs()));
        let wmax = w.iter().filter_map(|r| r.as_ref().ok()).cloned().fold(0.0, f64::max);
        einstein_override = Some(wmax);
        notes.push(note("conformally_flat", "Weyl tensor vanishes; locally conformally flat", Some(wmax)));
        Verdict::ConformallyEinstein
    } else if k == 0 {
        route = Some(Route::Listing);
        let (_, p0) = &good[0];
        match listing_field(def, p0, &cfg) {
            Ok(c) => {
                if let Some(b) = &c.base {
                    notes.push(note("listing_solve_residual", "post-solve residual at the first sample", Some(b.solve_residual)));
                }
                let v = verify_points(def, &c, &verify_set, &cfg);
                scaling_sign = v.scaling_sign();
                let verdict = v.verdict();
                verification = Some(v);
                verdict
            }
            Err(e) => {
                notes.push(note("route_error", e.to_string(), None));
                Verdict::Undetermined
            }
        }
    } else {
        match transversal_class {
            TransversalClass::NonIntegrable => {
                let (_, p0) = &good[0];
                let built: Result<Option<CandidateField<'_>>, DetectError> = kernel_at(def, p0, &cfg)
                    .map_err(DetectError::from)
                    .and_then(|(_, frame)| {
                        if k == 1 {
                            route = Some(Route::Rank1);
                            rank1_candidate(def, &frame, p0, &cfg).map(Some)
                        } else {
                            route = Some(Route::Rankk);
                            match rank_k_candidate(def, &frame, p0, &cfg)? {
                                RankKOutcome::Candidate(c) => Ok(Some(c)),
                                RankKOutcome::UndeterminedPde(stage) => {
                                    pde_stage = Some(stage);
                                    Ok(None)
                                }
                            }
                        }
                    });
                match built {
                    Ok(Some(c)) => {
                        if let Some(b) = &c.base {
                            notes.push(note("consistency_spread", "spread of f across admissible pairs at the first sample", Some(b.consistency_spread)));
                        }
                        let v = verify_points(def, &c, &verify_set, &cfg);
                        scaling_sign = v.scaling_sign();
                        let verdict = v.verdict();
                        verification = Some(v);
                        verdict
                    }
                    Ok(None) => {
                        notes.push(note(
                            "pde_stage",
                            "the staged linear systems leave coefficients fixed only by first-order differential equations",
                            None,
                        ));
                        Verdict::UndeterminedPde
                    }
                    Err(e) => {
                        notes.push(note("route_error", e.to_string(), None));
                        Verdict::Undetermined
                    }
                }
            }
            TransversalClass::Integrable => {
                let (verdict, v, sign) = integrable_route(def, k, &verify_set, &cfg, &mut notes);
                scaling_sign = sign;
                verification = v;
                verdict
            }
            _ => {
                notes.push(note(
                    "mixed_transversal_class",
                    "transversal defect neither uniformly small nor uniformly large; no route applies",
                    None,
                ));
                Verdict::Undetermined
            }
        }
    };

    if let Some(v) = &verification {
        exceptional_points.extend(v.failures.iter().cloned());
        records_with(&mut records, v);
    }
    exceptional_points.sort_by_key(|e| e.index);
    let (einstein_residual, rot_residual) = match (&verification, einstein_override) {
        (_, Some(w)) => (Some(w), None),
        (Some(v), None) if !v.samples.is_empty() => (Some(v.einstein_max), Some(v.rot_max)),
        _ => (None, None),
    };
    ClassificationReport {
        dim: n,
        rank_k: k,
        transversal_class,
        route,
        verdict,
        einstein_residual,
        rot_residual,
        frobenius_residual,
        contact_residual,
        scaling_sign,
        survey,
        exceptional_points,
        pde_stage,
        notes,
        per_sample: if config.per_sample { records } else { Vec::new() },
    }
}

/// Integrable kernels: the kernel part of `∇ψ` is not fixed pointwise, so
/// the natural trial fields `0` and `H/k` are tested.
fn integrable_route(
    def: &MetricDefinition,
    k: usize,
    points: &[(usize, Vec<f64>)],
    cfg: &FrameConfig,
    notes: &mut Vec<Note>,
) -> (Verdict, Option<Verification>, ScalingSign) {
    let n = def.dim();
    let c = *cfg;
    let trials: Vec<(&str, CandidateField<'_>)> = vec![
        ("zero", CandidateField::zero(n)),
        (
            "mean_curvature",
            CandidateField::given(0, move |q| {
                let h = mean_curvature_field(def, q, k, &c)?;
                Ok(h.iter().map(|x| x / k as f64).collect())
            }),
        ),
    ];
    let mut last = None;
    for (name, cand) in trials {
        let v = verify_points(def, &cand, points, cfg);
        if v.verdict() != Verdict::ConformallyEinstein {
            last = Some(v);
            continue;
        }
        let sign = v.scaling_sign();
        notes.push(note("integrable_trial", format!("trial field `{name}` passes the Einstein criterion"), None));
        let verdict = match sign {
            ScalingSign::Positive => {
                notes.push(note(
                    "expected_conformal_flatness",
                    "positive Einstein scaling with a degenerate Weyl kernel: the metric is expected to be locally conformally flat",
                    None,
                ));
                Verdict::ConformallyEinstein
            }
            ScalingSign::Zero => {
                if name == "zero" {
                    let split = map_indices(points.len(), |i| {
                        kernel_at(def, &points[i].1, cfg).map(|(b, f)| (mixed_curvature(&b, &f), transversal_geodesic_residual(&b, &f)))
                    });
                    let mixed = split.iter().filter_map(|r| r.as_ref().ok()).map(|x| x.0).fold(0.0, f64::max);
                    let tgeo = split.iter().filter_map(|r| r.as_ref().ok()).map(|x| x.1).fold(0.0, f64::max);
                    notes.push(note(
                        "product_split",
                        if mixed <= PRODUCT_TOL {
                            "Ricci-flat with integrable kernel: local product split verified (mixed curvatures vanish)"
                        } else {
                            "Ricci-flat with integrable kernel: mixed curvatures do not vanish"
                        },
                        Some(mixed),
                    ));
                    notes.push(note("transversal_geodesic_residual", "second fundamental form of the transversal distribution", Some(tgeo)));
                } else {
                    notes.push(note(
                        "product_split_expected",
                        "zero Einstein scaling: a local product split of the Einstein representative is expected (not checked natively)",
                        None,
                    ));
                }
                Verdict::ConformallyEinstein
            }
            ScalingSign::Negative => {
                notes.push(note(
                    "negative_scaling",
                    "negative Einstein scaling with a degenerate Weyl kernel; conformally Einstein spaces of this kind exist (warped-product example), so the classification is inconclusive",
                    None,
                ));
                Verdict::InconclusiveNegativeScaling
            }
            ScalingSign::Unknown => {
                notes.push(note("scaling_unknown", "the Einstein scaling sign varies across samples", None));
                Verdict::Undetermined
            }
        };
        return (verdict, Some(v), sign);
    }
    notes.push(note(
        "integrable_unresolved",
        "no trial field satisfies the Einstein criterion; for integrable kernels the kernel component of the gradient is not determined pointwise",
        None,
    ));
    let sign = last.as_ref().map_or(ScalingSign::Unknown, |v| v.scaling_sign());
    (Verdict::Undetermined, last, sign)
}

// ---------------------------------------------------------------------------
// Sasaki criteria

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Condition {
    pub pass: bool,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SasakiReport {
    pub dim: usize,
    pub rank_k: usize,
    /// Smallest `|η∧(dη)^m|` over samples.
    pub cond_contact: Condition,
    /// Largest `|Ω̃ Ω̃ᵀ − I|` with `Ω̃ = Ω / |det Ω|^{1/(2m)}`.
    pub cond_omega_orthogonal: Condition,
    /// Einstein residual of `V = ∇ψ`, `ψ = ln |det Ω|^{1/(2m)}`.
    pub cond_einstein: Condition,
    pub pass: bool,
    /// `σ = |det Ω|^{1/m}` at each sample.
    pub sigma: Vec<f64>,
    /// Orthogonality deviation when normalising by `σ` itself.
    pub literal_omega_deviation: f64,
    /// Einstein residual of `V = ∇σ`.
    pub literal_einstein_residual: f64,
    /// `κ = 1` nullity residual of `ξ` after normalising `τ = n(n−1)`
    /// (only where the metric itself is Einstein).
    pub tanno_residual: Option<f64>,
    pub exceptional_points: Vec<ExceptionalPoint>,
}

fn contact_at(def: &MetricDefinition, q: &[f64], cfg: &FrameConfig) -> Result<(CurvatureBundle, KernelFrame, crate::frame::ContactData), DetectError> {
    let (b, f) = kernel_at(def, q, cfg)?;
    if f.rank_k != 1 {
        return Err(DetectError::RankNotOne(f.rank_k));
    }
    let c = contact_invariants(&b, &f)?;
    Ok((b, f, c))
}

/// Gradient field of a scalar computed pointwise.
fn gradient_field<'a, F>(def: &'a MetricDefinition, scalar: F, cfg: &FrameConfig) -> CandidateField<'a>
where
    F: Fn(&[f64]) -> Result<f64, DetectError> + Send + Sync + 'a,
{
    let h = cfg.step;
    CandidateField::given(1, move |q| {
        let d = field_derivative(|x| scalar(x).map(|s| vec![s]).map_err(to_frame_error), q, h)?;
        let ginv = def.values_at(q)?.try_inverse().expect("positive definite");
        let n = q.len();
        Ok((0..n).map(|a| (0..n).map(|c| ginv[(a, c)] * d.value[c][0]).sum()).collect())
    })
}

pub fn sasaki_check(def: &MetricDefinition, config: &ClassifyConfig) -> Result<SasakiReport, DetectError> {
    let n = def.dim();
    if n % 2 == 0 || n < 5 {
        return Err(DetectError::EvenDimension(n));
    }
    let m = (n - 1) / 2;
    let cfg = config.frame;
    let sampler = config.sampler(def);
    let survey = degeneracy_survey(def, &sampler, config.verify_samples, &cfg);
    if survey.modal_rank != 1 {
        return Err(DetectError::RankNotOne(survey.modal_rank));
    }
    let points: Vec<(usize, Vec<f64>)> = (0..config.verify_samples)
        .filter(|&i| !survey.is_exceptional(i))
        .map(|i| (i, sampler.point(i)))
        .collect();
    let mut exceptional_points = survey.exceptional_points.clone();
    let pointwise = map_indices(points.len(), |i| contact_at(def, &points[i].1, &cfg));
    let mut top_min = f64::INFINITY;
    let mut dev: f64 = 0.0;
    let mut dev_literal: f64 = 0.0;
    let mut sigma = Vec::new();
    let mut tanno: Option<f64> = None;
    let mut ok_points = Vec::new();
    for ((idx, p), r) in points.iter().zip(pointwise) {
        let (b, f, c) = match r {
            Ok(x) => x,
            Err(e) => {
                exceptional_points.push(ExceptionalPoint {
                    index: *idx,
                    point: p.clone(),
                    rank: None,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        ok_points.push((*idx, p.clone()));
        top_min = top_min.min(c.top_form_norm.unwrap_or(0.0));
        let det = c.det_omega.abs();
        let s = det.powf(1.0 / m as f64);
        sigma.push(s);
        let om = DMatrix::from_fn(2 * m, 2 * m, |i, j| c.omega[i][j]);
        let orth = |scale: f64| -> f64 {
            if !(scale > ROTATION_FLOOR) {
                return f64::INFINITY;
            }
            let t = &om / scale;
            (&t * t.transpose() - DMatrix::identity(2 * m, 2 * m)).amax()
        };
        dev = dev.max(orth(det.powf(0.5 / m as f64)));
        dev_literal = dev_literal.max(orth(s));
        if b.ricci_traceless.max_abs() <= 1e-6 * (1.0 + b.tau.abs()) && b.rho > 0.0 {
            let r = kappa_nullity_residual(&b, &f.xi[0], b.rho) / b.rho;
            tanno = Some(tanno.map_or(r, |t: f64| t.max(r)));
        }
    }
    if ok_points.is_empty() {
        top_min = 0.0;
    }
    let log_det = move |q: &[f64]| -> Result<f64, DetectError> {
        let (_, _, c) = contact_at(def, q, &cfg)?;
        if c.det_omega.abs() < ROTATION_FLOOR {
            return Err(DetectError::NoAdmissiblePair {
                max_rotation: c.eta_wedge_deta_norm,
            });
        }
        Ok(c.det_omega.abs().ln() / (2 * m) as f64)
    };
    let psi = gradient_field(def, log_det, &cfg);
    let ver = verify_points(def, &psi, &ok_points, &cfg);
    let literal = gradient_field(
        def,
        move |q: &[f64]| -> Result<f64, DetectError> {
            let (_, _, c) = contact_at(def, q, &cfg)?;
            Ok(c.det_omega.abs().powf(1.0 / m as f64))
        },
        &cfg,
    );
    let ver_literal = verify_points(def, &literal, &ok_points, &cfg);
    exceptional_points.extend(ver.failures.iter().cloned());
    exceptional_points.sort_by_key(|e| e.index);
    let einstein = if ver.samples.is_empty() { f64::INFINITY } else { ver.einstein_max.max(ver.rot_max) };
    let cond_contact = Condition {
        pass: top_min > ROTATION_FLOOR,
        value: top_min,
    };
    let cond_omega_orthogonal = Condition {
        pass: !ok_points.is_empty() && dev <= SASAKI_TOL,
        value: dev,
    };
    let cond_einstein = Condition {
        pass: einstein <= SASAKI_TOL,
        value: einstein,
    };
    Ok(SasakiReport {
        dim: n,
        rank_k: 1,
        pass: cond_contact.pass && cond_omega_orthogonal.pass && cond_einstein.pass,
        cond_contact,
        cond_omega_orthogonal,
        cond_einstein,
        sigma,
        literal_omega_deviation: dev_literal,
        literal_einstein_residual: ver_literal.einstein_max.max(ver_literal.rot_max),
        tanno_residual: tanno,
        exceptional_points,
    })
}

// ---------------------------------------------------------------------------
// Conformal transformation self-checks

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CSpaceCheck {
    /// Max relative deviation of `δ̄W̄` from `δW + (n−3) W(·,·,·,∇φ)`.
    pub residual: f64,
    pub lhs_max: f64,
    pub rhs_max: f64,
    /// Max relative deviation of the (1,3) Weyl tensors.
    pub weyl_invariance: f64,
}

pub fn cspace_transform_check(def: &MetricDefinition, phi: &Expr, sampler: &Sampler, samples: usize) -> Result<CSpaceCheck, DetectError> {
    let rescaled = conformal_rescale(def, phi);
    let n = def.dim();
    let per = map_indices(samples, |i| -> Result<(f64, f64, f64, f64), DetectError> {
        let p = sampler.point(i);
        let b = bundle_at(def, &p)?;
        let bb = bundle_at(&rescaled, &p)?;
        let dphi = def.eval_expr(phi, &p)?;
        let grad: Vec<f64> = (0..n).map(|a| (0..n).map(|c| b.g_inv[(a, c)] * dphi.grad()[c]).sum()).collect();
        let ins = b.weyl_insert_last(&grad);
        let rhs: Vec<f64> = b
            .weyl_div
            .data()
            .iter()
            .zip(ins.data())
            .map(|(d, w)| d + (n as f64 - 3.0) * w)
            .collect();
        let lhs = bb.weyl_div.data();
        let diff = lhs.iter().zip(&rhs).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
        let lmax = lhs.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let rmax = rhs.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let w = b.weyl_raised();
        let wb = bb.weyl_raised();
        let wscale = w.max_abs().max(wb.max_abs()).max(1e-300);
        let winv = w.max_diff(&wb) / wscale;
        let scale = lmax.max(rmax);
        let rel = if scale > 1e-300 { diff / scale } else { 0.0 };
        Ok((rel, lmax, rmax, winv))
    });
    let mut out = CSpaceCheck {
        residual: 0.0,
        lhs_max: 0.0,
        rhs_max: 0.0,
        weyl_invariance: 0.0,
    };
    for r in per {
        let (rel, l, rr, w) = r?;
        out.residual = out.residual.max(rel);
        out.lhs_max = out.lhs_max.max(l);
        out.rhs_max = out.rhs_max.max(rr);
        out.weyl_invariance = out.weyl_invariance.max(w);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MeanCurvatureTransform {
    /// Max ḡ-norm of `H̄ − e^{−2φ}(H − k π^⊥∇φ)`.
    pub residual: f64,
    /// Max geodesic residual of the kernel in the rescaled metric.
    pub rescaled_geodesic_residual: f64,
    pub original_geodesic_residual: f64,
}

pub fn mean_curvature_transform_check(
    def: &MetricDefinition,
    phi: &Expr,
    sampler: &Sampler,
    samples: usize,
    cfg: &FrameConfig,
) -> Result<MeanCurvatureTransform, DetectError> {
    let rescaled = conformal_rescale(def, phi);
    let n = def.dim();
    let per = map_indices(samples, |i| -> Result<(f64, f64, f64), DetectError> {
        let p = sampler.point(i);
        let (b, f) = kernel_at(def, &p, cfg)?;
        let (bb, ff) = kernel_at(&rescaled, &p, cfg)?;
        if f.rank_k != ff.rank_k || f.rank_k == 0 {
            return Err(FrameError::RankDrift {
                expected: f.rank_k,
                found: ff.rank_k,
                point: p,
            }
            .into());
        }
        let k = f.rank_k as f64;
        let fol = mean_curvature_jet(&b, &f);
        let fol_bar = mean_curvature_jet(&bb, &ff);
        let dphi = def.eval_expr(phi, &p)?;
        let grad: Vec<f64> = (0..n).map(|a| (0..n).map(|c| b.g_inv[(a, c)] * dphi.grad()[c]).sum()).collect();
        let perp = f.perp(&b.g, &grad);
        let w = (-2.0 * dphi.value()).exp();
        let diff: Vec<f64> = (0..n)
            .map(|c| fol_bar.h_vec[c] - w * (fol.h_vec[c] - k * perp[c]))
            .collect();
        Ok((g_dot(&bb.g, &diff, &diff).max(0.0).sqrt(), fol_bar.geodesic_residual, fol.geodesic_residual))
    });
    let mut out = MeanCurvatureTransform {
        residual: 0.0,
        rescaled_geodesic_residual: 0.0,
        original_geodesic_residual: 0.0,
    };
    for r in per {
        let (d, gb, g) = r?;
        out.residual = out.residual.max(d);
        out.rescaled_geodesic_residual = out.rescaled_geodesic_residual.max(gb);
        out.original_geodesic_residual = out.original_geodesic_residual.max(g);
    }
    Ok(out)
}

/// ONB components of a chart vector (helper for reports and tests).
pub fn vector_in_onb(b: &CurvatureBundle, v: &[f64]) -> Vec<f64> {
    let e = orthonormal_frame(&b.g).expect("positive definite");
    onb_coords(b, &e, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn antisym(n: usize, f: impl Fn(usize, usize) -> f64) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| if i < j { f(i, j) } else if i > j { -f(j, i) } else { 0.0 })
    }

    #[test]
    fn full_rank_stage_solves_directly() {
        let (n, k) = (5, 2);
        let r0 = antisym(n, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let r1 = antisym(n, |i, j| ((i * 2 + j * 5) % 7) as f64 * 0.3 - 1.0);
        let f = [0.7, -1.3];
        let base = -(&r0 * f[0] + &r1 * f[1]);
        let model = LinearStageModel {
            n,
            k,
            rot_xi: vec![r0, r1],
            rot_base: base,
        };
        match solve_stages(&model).unwrap() {
            StageOutcome::Solved { coeffs, ranks, .. } => {
                assert_eq!(ranks, vec![2]);
                assert!((coeffs[0] - f[0]).abs() < 1e-12 && (coeffs[1] - f[1]).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_first_stage_is_route_error() {
        let n = 4;
        let model = LinearStageModel {
            n,
            k: 2,
            rot_xi: vec![DMatrix::zeros(n, n), DMatrix::zeros(n, n)],
            rot_base: DMatrix::zeros(n, n),
        };
        assert_eq!(solve_stages(&model), Err(DetectError::RankZeroOmega));
    }

    #[test]
    fn verdict_thresholds() {
        let mk = |e: &[f64]| {
            let s = e
                .iter()
                .enumerate()
                .map(|(i, &x)| SampleResidual {
                    index: i,
                    point: vec![],
                    einstein: x,
                    rot: 0.0,
                    scaling: 1.0,
                    tau: 1.0,
                    derivative_error: 0.0,
                })
                .collect();
            Verification::from_parts(s, vec![])
        };
        assert_eq!(mk(&[1e-6, 2e-5, 5e-4]).verdict(), Verdict::ConformallyEinstein);
        assert_eq!(mk(&[5e-4, 5e-4, 1e-6]).verdict(), Verdict::Undetermined);
        assert_eq!(mk(&[1e-6, 0.02]).verdict(), Verdict::NotConformallyEinstein);
        assert_eq!(mk(&[]).verdict(), Verdict::Undetermined);
    }
}
