//! Property tests for third-order jets: ring laws, elementary-function
//! derivatives against closed forms, and Taylor consistency.

use proptest::prelude::*;
use weylscope::jet::{pair_count, triple_count, Jet3};

const N: usize = 3;

fn jet_strategy() -> impl Strategy<Value = Jet3> {
    (
        -2.0..2.0f64,
        prop::collection::vec(-2.0..2.0f64, N),
        prop::collection::vec(-2.0..2.0f64, pair_count(N)),
        prop::collection::vec(-2.0..2.0f64, triple_count(N)),
    )
        .prop_map(|(v, g, h, t)| Jet3::from_parts(v, g, h, t))
}

fn all_derivatives(j: &Jet3) -> Vec<f64> {
    let mut out = vec![j.value()];
    for i in 0..N {
        out.push(j.d1(i));
        for k in 0..N {
            out.push(j.d2(i, k));
            for l in 0..N {
                out.push(j.d3(i, k, l));
            }
        }
    }
    out
}

fn close(a: &Jet3, b: &Jet3, tol: f64) -> bool {
    let (x, y) = (all_derivatives(a), all_derivatives(b));
    let scale = x.iter().chain(&y).fold(1.0f64, |m, v| m.max(v.abs()));
    x.iter().zip(&y).all(|(p, q)| (p - q).abs() <= tol * scale)
}

/// `a·x` as a jet at `x`.
fn linear(a: &[f64], x: &[f64]) -> Jet3 {
    let mut s = Jet3::constant(0.0, N);
    for i in 0..N {
        s = &s + &Jet3::variable(x[i], i, N).scale(a[i]);
    }
    s
}

proptest! {
    #[test]
    fn multiplication_is_commutative(a in jet_strategy(), b in jet_strategy()) {
        prop_assert!(close(&(&a * &b), &(&b * &a), 1e-13));
    }

    #[test]
    fn multiplication_is_associative(a in jet_strategy(), b in jet_strategy(), c in jet_strategy()) {
        prop_assert!(close(&(&(&a * &b) * &c), &(&a * &(&b * &c)), 1e-12));
    }

    #[test]
    fn multiplication_distributes(a in jet_strategy(), b in jet_strategy(), c in jet_strategy()) {
        let lhs = &a * &(&b + &c);
        let rhs = &(&a * &b) + &(&a * &c);
        prop_assert!(close(&lhs, &rhs, 1e-12));
    }

    #[test]
    fn division_inverts_multiplication(a in jet_strategy(), v in 0.5..2.0f64, b in jet_strategy()) {
        let b = b.add_scalar(v - b.value() + 1.0);
        let q = (&a * &b).div_jet(&b).unwrap();
        prop_assert!(close(&q, &a, 1e-10));
    }

    #[test]
    fn exp_of_ln_is_identity(a in jet_strategy(), v in 0.3..3.0f64) {
        let a = a.add_scalar(v - a.value());
        prop_assert!(close(&a.ln().unwrap().exp(), &a, 1e-11));
    }

    #[test]
    fn pythagorean_identity(a in jet_strategy()) {
        let s = a.sin();
        let c = a.cos();
        let one = &(&s * &s) + &(&c * &c);
        prop_assert!(close(&one, &Jet3::constant(1.0, N), 1e-12));
    }

    #[test]
    fn sqrt_squares_back(a in jet_strategy(), v in 0.5..3.0f64) {
        let a = a.add_scalar(v - a.value());
        let r = a.sqrt().unwrap();
        prop_assert!(close(&(&r * &r), &a, 1e-11));
    }

    #[test]
    fn exp_of_linear_matches_closed_form(
        a in prop::collection::vec(-1.5..1.5f64, N),
        x in prop::collection::vec(-1.0..1.0f64, N),
    ) {
        let j = linear(&a, &x).exp();
        let f = a.iter().zip(&x).map(|(p, q)| p * q).sum::<f64>().exp();
        for i in 0..N {
            prop_assert!((j.d1(i) - a[i] * f).abs() < 1e-12 * f.max(1.0));
            for k in 0..N {
                prop_assert!((j.d2(i, k) - a[i] * a[k] * f).abs() < 1e-12 * f.max(1.0));
                for l in 0..N {
                    prop_assert!((j.d3(i, k, l) - a[i] * a[k] * a[l] * f).abs() < 1e-12 * f.max(1.0));
                }
            }
        }
    }

    #[test]
    fn sin_of_linear_matches_closed_form(
        a in prop::collection::vec(-1.5..1.5f64, N),
        x in prop::collection::vec(-1.0..1.0f64, N),
    ) {
        let j = linear(&a, &x).sin();
        let u: f64 = a.iter().zip(&x).map(|(p, q)| p * q).sum();
        for i in 0..N {
            prop_assert!((j.d1(i) - a[i] * u.cos()).abs() < 1e-12);
            for k in 0..N {
                prop_assert!((j.d2(i, k) + a[i] * a[k] * u.sin()).abs() < 1e-12);
                for l in 0..N {
                    prop_assert!((j.d3(i, k, l) + a[i] * a[k] * a[l] * u.cos()).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn third_derivatives_are_symmetric(a in jet_strategy(), b in jet_strategy()) {
        let j = (&a * &b).sin();
        for i in 0..N {
            for k in 0..N {
                prop_assert_eq!(j.d2(i, k), j.d2(k, i));
                for l in 0..N {
                    prop_assert_eq!(j.d3(i, k, l), j.d3(l, i, k));
                    prop_assert_eq!(j.d3(i, k, l), j.d3(k, i, l));
                }
            }
        }
    }

    /// The truncated Taylor polynomial of a jet agrees with the function to
    /// fourth order in the step.
    #[test]
    fn taylor_polynomial_is_fourth_order(
        a in prop::collection::vec(-1.0..1.0f64, N),
        x in prop::collection::vec(-1.0..1.0f64, N),
        dir in prop::collection::vec(-1.0..1.0f64, N),
    ) {
        let f = |p: &[f64]| {
            let u: f64 = a.iter().zip(p).map(|(c, q)| c * q).sum();
            u.sin() * (0.3 * p[0]).exp()
        };
        let j = &linear(&a, &x).sin() * &Jet3::variable(x[0], 0, N).scale(0.3).exp();
        // Lagrange remainder: the fourth directional derivative of
        // sin(a·x) e^{0.3 x_0} is at most (|a·d| + 0.3|d_0|)^4 e^{0.3 x_0}.
        let s = a.iter().zip(&dir).map(|(p, q)| p * q).sum::<f64>().abs() + 0.3 * dir[0].abs();
        for h in [1e-2, 5e-3] {
            let d: Vec<f64> = dir.iter().map(|v| v * h).collect();
            let p: Vec<f64> = x.iter().zip(&d).map(|(u, v)| u + v).collect();
            let bound = (s * h).powi(4) / 24.0 * (0.3 * (x[0].abs() + h)).exp() + 1e-14;
            prop_assert!((j.taylor_eval(&d) - f(&p)).abs() <= bound);
        }
    }
}
