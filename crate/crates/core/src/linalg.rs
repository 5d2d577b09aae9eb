//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Minimum ratio between the smallest kept and the largest dropped singular
/// value for a rank decision to count as clean.
pub const DEFAULT_MIN_GAP: f64 = 1e3;

/// Columns form a g-orthonormal basis: `E^T g E = I`, with `E = L^{-T}` for
/// the Cholesky factor `g = L L^T`. Deterministic and smooth in `g`.
pub fn orthonormal_frame(g: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = g.clone().cholesky()?;
    let l = chol.l();
    let n = g.nrows();
    let linv = l.solve_lower_triangular(&DMatrix::identity(n, n))?;
    Some(linv.transpose())
}

/// Outcome of a relative singular-value threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct RankDecision {
    /// Number of singular values above `tol * scale`.
    pub rank: usize,
    /// Ratio between the smallest kept and largest dropped value.
    pub gap: f64,
    pub clean: bool,
}

/// Decides a numerical rank from singular values (any order).
///
/// Values `<= tol * scale` are dropped. If nothing is kept the reference for
/// the gap is `scale` itself, if nothing is dropped it is `tol * scale`.
pub fn decide_rank(sv: &[f64], tol: f64, scale: f64, min_gap: f64) -> RankDecision {
    let mut s: Vec<f64> = sv.iter().map(|v| v.abs()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let thr = tol * scale;
    let rank = s.iter().take_while(|&&v| v > thr).count();
    let kept_min = if rank > 0 { s[rank - 1] } else { scale };
    let dropped_max = if rank < s.len() { s[rank] } else { thr };
    let gap = if dropped_max > 0.0 {
        kept_min / dropped_max
    } else {
        f64::INFINITY
    };
    RankDecision {
        rank,
        gap,
        clean: gap >= min_gap,
    }
}

/// Least-squares solution of `A x = b` (minimum norm), discarding singular
/// values below `rcond` times the largest.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>, rcond: f64) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return DVector::zeros(a.ncols());
    }
    svd.solve(b, rcond * smax).expect("u and v were computed")
}

/// Orthonormal (Euclidean) bases of the row space and null space of `a`
/// for a given rank, as columns.
pub fn row_and_null_space(a: &DMatrix<f64>, rank: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = a.ncols();
    // Pad so the SVD returns a full right basis.
    let rows = a.nrows().max(k);
    let mut padded = DMatrix::zeros(rows, k);
    padded.view_mut((0, 0), (a.nrows(), k)).copy_from(a);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("v requested");
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let row = DMatrix::from_fn(k, rank, |r, c| vt[(order[c], r)]);
    let null = DMatrix::from_fn(k, k - rank, |r, c| vt[(order[rank + c], r)]);
    (row, null)
}

/// Orthogonal `Q` minimising `|A Q - B|_F` (both `m x k`).
pub fn procrustes(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let m = a.transpose() * b;
    let svd = m.svd(true, true);
    svd.u.unwrap() * svd.v_t.unwrap()
}

pub fn g_dot(g: &DMatrix<f64>, x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += g[(i, j)] * x[i] * y[j];
        }
    }
    s
}

/// Modified Gram-Schmidt in the inner product `g`. Vectors whose residual
/// norm falls below `floor` are skipped.
pub fn gram_schmidt_g(g: &DMatrix<f64>, vectors: &[Vec<f64>], floor: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let mut w = v.clone();
        for _ in 0..2 {
            for u in &out {
                let c = g_dot(g, &w, u);
                for (wi, ui) in w.iter_mut().zip(u) {
                    *wi -= c * ui;
                }
            }
        }
        let norm = g_dot(g, &w, &w).max(0.0).sqrt();
        if norm > floor {
            out.push(w.into_iter().map(|x| x / norm).collect());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_is_orthonormal() {
        let g = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 1.0]);
        let e = orthonormal_frame(&g).unwrap();
        let id = e.transpose() * &g * &e;
        assert!((id - DMatrix::identity(3, 3)).amax() < 1e-14);
    }

    #[test]
    fn rank_decisions() {
        let d = decide_rank(&[1.0, 0.5, 1e-12], 1e-7, 1.0, 1e3);
        assert_eq!((d.rank, d.clean), (2, true));
        let d = decide_rank(&[1.0, 2e-7, 5e-8], 1e-7, 1.0, 1e3);
        assert_eq!((d.rank, d.clean), (2, false));
        let d = decide_rank(&[1e-15, 1e-16], 1e-7, 1.0, 1e3);
        assert_eq!((d.rank, d.clean), (0, true));
        let d = decide_rank(&[3.0, 2.0], 1e-7, 3.0, 1e3);
        assert_eq!((d.rank, d.clean), (2, true));
    }

    #[test]
    fn lstsq_solves_overdetermined_consistent_system() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, -1.0]);
        let x = DVector::from_vec(vec![0.7, -0.3]);
        let b = &a * &x;
        assert!((lstsq(&a, &b, 1e-12) - x).amax() < 1e-14);
    }

    #[test]
    fn spaces_split_the_domain() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 2.0, 2.0, 0.0]);
        let (row, null) = row_and_null_space(&a, 1);
        assert_eq!((row.ncols(), null.ncols()), (1, 2));
        assert!((&a * &null).amax() < 1e-14);
        let q = DMatrix::from_fn(3, 3, |i, j| if j == 0 { row[(i, 0)] } else { null[(i, j - 1)] });
        assert!((q.transpose() * &q - DMatrix::identity(3, 3)).amax() < 1e-14);
    }

    #[test]
    fn procrustes_recovers_rotation() {
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let r = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, 2.0, -1.0, 0.3]);
        let b = &a * &r;
        assert!((procrustes(&a, &b) - r).amax() < 1e-13);
    }
}
