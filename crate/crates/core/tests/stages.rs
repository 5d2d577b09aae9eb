//! The staged linear systems for rank-k kernels, driven by synthetic
//! rotation data in an orthonormal frame whose first k vectors span the
//! kernel.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weylscope::detect::{advance, solve_stages, stage_outcome_pde, Advance, DetectError, LinearStageModel, StageOutcome, StageState};

fn antisym(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = rng.gen_range(-1.0..1.0);
            m[(i, j)] = v;
            m[(j, i)] = -v;
        }
    }
    m
}

/// Brute-force oracle for the first stage: every transversal pair, solved
/// through the normal equations.
fn first_stage_lstsq(model: &LinearStageModel) -> DVector<f64> {
    let (n, k) = (model.n, model.k);
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for a in k..n {
        for b in a + 1..n {
            rows.push((0..k).map(|s| model.rot_xi[s][(a, b)]).collect::<Vec<_>>());
            rhs.push(-model.rot_base[(a, b)]);
        }
    }
    let a = DMatrix::from_fn(rows.len(), k, |r, c| rows[r][c]);
    let b = DVector::from_vec(rhs);
    let ata = a.transpose() * &a;
    ata.cholesky().expect("full column rank").solve(&(a.transpose() * b))
}

fn consistent_base(rot_xi: &[DMatrix<f64>], f: &[f64]) -> DMatrix<f64> {
    let n = rot_xi[0].nrows();
    let mut m = DMatrix::zeros(n, n);
    for (r, c) in rot_xi.iter().zip(f) {
        m -= r * *c;
    }
    m
}

#[test]
fn full_rank_systems_match_least_squares_oracle() {
    let (n, k) = (10, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for case in 0..100 {
        let rot_xi: Vec<_> = (0..k).map(|_| antisym(&mut rng, n)).collect();
        // Generic right-hand side: the system is overdetermined and
        // inconsistent, so this exercises the least-squares branch.
        let model = LinearStageModel {
            n,
            k,
            rot_base: antisym(&mut rng, n),
            rot_xi,
        };
        let want = first_stage_lstsq(&model);
        match solve_stages(&model).unwrap() {
            StageOutcome::Solved { coeffs, ranks, .. } => {
                assert_eq!(ranks, vec![k], "case {case}");
                let err = (&coeffs - &want).amax();
                assert!(err <= 1e-10, "case {case}: {err:e}");
            }
            other => panic!("case {case}: {other:?}"),
        }
    }
}

#[test]
fn consistent_full_rank_systems_recover_the_answer_exactly() {
    let (n, k) = (8, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let rot_xi: Vec<_> = (0..k).map(|_| antisym(&mut rng, n)).collect();
        let f: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let model = LinearStageModel {
            n,
            k,
            rot_base: consistent_base(&rot_xi, &f),
            rot_xi,
        };
        let StageOutcome::Solved { coeffs, spread, .. } = solve_stages(&model).unwrap() else {
            panic!("expected a solution");
        };
        assert!((coeffs - DVector::from_vec(f)).amax() < 1e-12);
        assert!(spread < 1e-12);
    }
}

/// Rank-deficient first stage (rank 1 for k = 2): the transversal blocks of
/// the two rotations are proportional, and the mixed kernel/transversal
/// entries of the second stage pin down the remaining coefficient.
fn rank_deficient_case(rng: &mut ChaCha8Rng, n: usize) -> (LinearStageModel, Vec<f64>) {
    let k = 2;
    let r0 = antisym(rng, n);
    let c = rng.gen_range(0.5..2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let mut r1 = antisym(rng, n);
    for a in k..n {
        for b in k..n {
            r1[(a, b)] = c * r0[(a, b)];
        }
    }
    let f = vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
    let rot_xi = vec![r0, r1];
    (
        LinearStageModel {
            n,
            k,
            rot_base: consistent_base(&rot_xi, &f),
            rot_xi,
        },
        f,
    )
}

#[test]
fn rank_deficient_systems_recover_constructed_answers() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for case in 0..50 {
        let (model, f) = rank_deficient_case(&mut rng, 7);
        match solve_stages(&model).unwrap() {
            StageOutcome::Solved { coeffs, ranks, .. } => {
                assert_eq!(ranks, vec![1, 1], "case {case}");
                let err = (coeffs - DVector::from_vec(f)).amax();
                assert!(err <= 1e-8, "case {case}: {err:e}");
            }
            other => panic!("case {case}: {other:?}"),
        }
    }
}

#[test]
fn first_stage_splits_row_and_null_space() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (model, _) = rank_deficient_case(&mut rng, 6);
    let Advance::Continue(state) = advance(&model, &StageState::initial(2)).unwrap() else {
        panic!("expected a second stage");
    };
    assert_eq!(state.determined_count(), 1);
    assert_eq!(state.ranks, vec![1]);
    // The new basis stays orthonormal.
    let b = &state.basis;
    assert!((b.transpose() * b - DMatrix::identity(2, 2)).amax() < 1e-12);
}

/// When the null-space combination rotates only inside the kernel, the
/// second stage is empty and the problem becomes a PDE.
#[test]
fn tail_case_is_undetermined_pde_with_full_column_rank() {
    let n = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let r0 = antisym(&mut rng, n);
    let c = 1.5;
    let mut r1 = &r0 * c;
    r1[(0, 1)] += 0.8;
    r1[(1, 0)] -= 0.8;
    let model = LinearStageModel {
        n,
        k: 2,
        rot_base: consistent_base(&[r0.clone(), r1.clone()], &[0.3, -0.4]),
        rot_xi: vec![r0, r1],
    };
    let outcome = solve_stages(&model).unwrap();
    let StageOutcome::UndeterminedPde { ref omega_star, determined, ref ranks } = outcome else {
        panic!("expected the PDE tail, got {outcome:?}");
    };
    assert_eq!(ranks, &vec![1, 0]);
    assert_eq!(determined, 1);
    let pde = stage_outcome_pde(&outcome).unwrap();
    assert_eq!(pde.column_rank, omega_star.ncols());
    assert!(omega_star.amax() > 0.1);
}

#[test]
fn zero_first_stage_is_rejected() {
    let n = 5;
    let model = LinearStageModel {
        n,
        k: 2,
        rot_xi: vec![DMatrix::zeros(n, n), DMatrix::zeros(n, n)],
        rot_base: DMatrix::zeros(n, n),
    };
    assert_eq!(solve_stages(&model), Err(DetectError::RankZeroOmega));
}
