//! Built-in property suites: jet arithmetic, the chain rule against finite
//! differences, curvature symmetries and the conformal conventions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::random_metric;
use crate::curvature::{bundle_at, CurvatureBundle};
use crate::detect::cspace_transform_check;
use crate::expr::{jet_eval, value_eval, BinOp, Bindings, Expr, Func};
use crate::jet::{pair_count, triple_count, Jet3};
use crate::sample::Sampler;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    /// Largest observed (relative) deviation.
    pub worst: f64,
    pub tolerance: f64,
    pub cases: usize,
}

impl SuiteResult {
    fn new(name: &str, worst: f64, tolerance: f64, cases: usize) -> Self {
        SuiteResult {
            name: name.to_string(),
            passed: worst.is_finite() && worst <= tolerance,
            worst,
            tolerance,
            cases,
        }
    }
}

fn random_jet(rng: &mut ChaCha8Rng, n: usize, value: f64) -> Jet3 {
    let mut r = |m: usize| (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    Jet3::from_parts(value, r(n), r(pair_count(n)), r(triple_count(n)))
}

fn jet_diff(a: &Jet3, b: &Jet3) -> f64 {
    (a - b).max_abs() / (1.0 + a.max_abs().max(b.max_abs()))
}

/// Ring laws, quotient, `exp ∘ ln` and `sqrt²` on random jets.
pub fn jet_ring_laws(seed: u64, cases: usize) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = rng.gen_range(1..=4);
        let va = rng.gen_range(0.5..2.0);
        let vb = rng.gen_range(0.5..2.0);
        let vc = rng.gen_range(-2.0..2.0);
        let a = random_jet(&mut rng, n, va);
        let b = random_jet(&mut rng, n, vb);
        let c = random_jet(&mut rng, n, vc);
        worst = worst.max(jet_diff(&(&(&a * &b) * &c), &(&a * &(&b * &c))));
        worst = worst.max(jet_diff(&(&a * &(&b + &c)), &(&(&a * &b) + &(&a * &c))));
        worst = worst.max(jet_diff(&(&a * &b), &(&b * &a)));
        worst = worst.max(jet_diff(&(&a.div_jet(&b).unwrap() * &b), &a));
        worst = worst.max(jet_diff(&a.ln().unwrap().exp(), &a));
        let s = a.sqrt().unwrap();
        worst = worst.max(jet_diff(&(&s * &s), &a));
        let sc = c.sin();
        let cc = c.cos();
        let one = &(&sc * &sc) + &(&cc * &cc);
        worst = worst.max(jet_diff(&one, &Jet3::constant(1.0, n)));
    }
    SuiteResult::new("jet_ring_laws", worst, 1e-12, cases)
}

/// A random expression tree over `x1..xn` whose value stays in a safe
/// range on `(-1, 1)^n`.
pub fn random_expr(rng: &mut ChaCha8Rng, n: usize, depth: usize) -> Expr {
    if depth == 0 || rng.gen_bool(0.2) {
        return if rng.gen_bool(0.7) {
            Expr::ident(format!("x{}", rng.gen_range(1..=n)))
        } else {
            Expr::num((rng.gen_range(-2.0..2.0) * 100.0_f64).round() / 100.0)
        };
    }
    let sub = |rng: &mut ChaCha8Rng| random_expr(rng, n, depth - 1);
    match rng.gen_range(0..9) {
        0 => Expr::binary(BinOp::Add, sub(rng), sub(rng)),
        1 => Expr::binary(BinOp::Sub, sub(rng), sub(rng)),
        2 | 3 => Expr::binary(BinOp::Mul, sub(rng), sub(rng)),
        4 => {
            // Denominator bounded away from zero.
            let d = Expr::binary(BinOp::Add, Expr::num(2.0), Expr::call(Func::Sin, sub(rng)));
            Expr::binary(BinOp::Div, sub(rng), d)
        }
        5 => Expr::call(Func::Sin, sub(rng)),
        6 => Expr::call(Func::Cos, sub(rng)),
        7 => Expr::call(Func::Exp, Expr::call(Func::Sin, sub(rng))),
        _ => {
            let inner = Expr::binary(BinOp::Add, Expr::num(1.5), Expr::call(Func::Cos, sub(rng)));
            Expr::call(if rng.gen_bool(0.5) { Func::Log } else { Func::Sqrt }, inner)
        }
    }
}

/// Jet gradients and Hessians of random trees against central differences
/// of plain evaluation.
pub fn chain_rule(seed: u64, trees: usize) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let n = 3;
    let coords: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    let bind = Bindings {
        coords: &coords,
        ..Default::default()
    };
    for _ in 0..trees {
        let e = random_expr(&mut rng, n, 4);
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.8..0.8)).collect();
        let j = jet_eval(&e, &bind, &p).expect("safe expression");
        let f = |q: &[f64]| value_eval(&e, &bind, q).expect("safe expression");
        let h = 1e-3;
        let scale = 1.0 + j.max_abs();
        let shifted = |a: usize, s: f64| {
            let mut q = p.clone();
            q[a] += s;
            q
        };
        // Central differences with one Richardson step.
        let rich = |d: &dyn Fn(f64) -> f64| (4.0 * d(0.5 * h) - d(h)) / 3.0;
        for a in 0..n {
            let d = rich(&|s| (f(&shifted(a, s)) - f(&shifted(a, -s))) / (2.0 * s));
            worst = worst.max((d - j.d1(a)).abs() / scale);
            let jets = |s: f64| {
                (
                    jet_eval(&e, &bind, &shifted(a, s)).unwrap(),
                    jet_eval(&e, &bind, &shifted(a, -s)).unwrap(),
                )
            };
            let (jp1, jm1) = jets(h);
            let (jp2, jm2) = jets(0.5 * h);
            for b in 0..n {
                let d2 = (4.0 * (jp2.d1(b) - jm2.d1(b)) / h - (jp1.d1(b) - jm1.d1(b)) / (2.0 * h)) / 3.0;
                worst = worst.max((d2 - j.d2(a, b)).abs() / scale);
                for c in 0..n {
                    let d3 = (4.0 * (jp2.d2(b, c) - jm2.d2(b, c)) / h - (jp1.d2(b, c) - jm1.d2(b, c)) / (2.0 * h)) / 3.0;
                    worst = worst.max((d3 - j.d3(a, b, c)).abs() / scale);
                }
            }
        }
    }
    SuiteResult::new("chain_rule_fd", worst, 1e-6, trees)
}

/// Relative deviations of the algebraic curvature identities at a point:
/// `(riemann symmetries, first Bianchi, Weyl traces, δW − (n−3)C)`.
pub fn curvature_identities(b: &CurvatureBundle) -> [f64; 4] {
    let n = b.dim();
    let r = &b.riemann;
    let rs = r.max_abs().max(1e-300);
    let mut sym: f64 = 0.0;
    let mut bianchi: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let v = r.at4(i, j, k, l);
                    sym = sym.max((v + r.at4(j, i, k, l)).abs());
                    sym = sym.max((v + r.at4(i, j, l, k)).abs());
                    sym = sym.max((v - r.at4(k, l, i, j)).abs());
                    bianchi = bianchi.max((v + r.at4(j, k, i, l) + r.at4(k, i, j, l)).abs());
                }
            }
        }
    }
    let w = &b.weyl;
    let ws = w.max_abs().max(1e-300);
    let mut trace: f64 = 0.0;
    for x in 0..n {
        for y in 0..n {
            let (mut t14, mut t13, mut t24) = (0.0, 0.0, 0.0);
            for a in 0..n {
                for d in 0..n {
                    let gi = b.g_inv[(a, d)];
                    t14 += gi * w.at4(a, x, y, d);
                    t13 += gi * w.at4(a, x, d, y);
                    t24 += gi * w.at4(x, a, y, d);
                }
            }
            trace = trace.max(t14.abs()).max(t13.abs()).max(t24.abs());
        }
    }
    let c = (n as f64) - 3.0;
    let ds = b.weyl_div.max_abs().max(b.cotton.max_abs() * c.abs()).max(1e-300);
    let div = b
        .weyl_div
        .data()
        .iter()
        .zip(b.cotton.data())
        .map(|(d, ct)| (d - c * ct).abs())
        .fold(0.0, f64::max);
    [sym / rs, bianchi / rs, trace / ws, div / ds]
}

/// The curvature identity suites over random metrics.
pub fn curvature_suites(seed: u64, metrics: usize, points: usize) -> Vec<SuiteResult> {
    let mut worst = [0.0f64; 4];
    let mut cases = 0;
    for m in 0..metrics {
        let n = 4 + m % 2;
        let def = random_metric(n, seed.wrapping_add(m as u64));
        let sampler = Sampler::for_metric(&def, seed ^ 0x5eed);
        for i in 0..points {
            let b = bundle_at(&def, &sampler.point(i)).expect("random metrics are positive definite");
            for (w, v) in worst.iter_mut().zip(curvature_identities(&b)) {
                *w = w.max(v);
            }
            cases += 1;
        }
    }
    vec![
        SuiteResult::new("riemann_symmetries", worst[0], 1e-8, cases),
        SuiteResult::new("first_bianchi", worst[1], 1e-8, cases),
        SuiteResult::new("weyl_trace_free", worst[2], 1e-9, cases),
        SuiteResult::new("divergence_cotton", worst[3], 1e-7, cases),
    ]
}

/// Divergence transformation and (1,3) Weyl invariance under random
/// conformal factors.
pub fn conformal_suites(seed: u64, metrics: usize, points: usize) -> Vec<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0f);
    let (mut eq, mut inv) = (0.0f64, 0.0f64);
    for m in 0..metrics {
        let n = 4 + m % 2;
        let def = random_metric(n, seed.wrapping_add(m as u64));
        let phi = random_conformal_factor(&mut rng, n);
        let sampler = Sampler::for_metric(&def, seed ^ 0x5eed);
        let r = cspace_transform_check(&def, &phi, &sampler, points).expect("random metrics evaluate");
        eq = eq.max(r.residual);
        inv = inv.max(r.weyl_invariance);
    }
    vec![
        SuiteResult::new("conformal_divergence", eq, 1e-6, metrics * points),
        SuiteResult::new("weyl_conformal_invariance", inv, 1e-7, metrics * points),
    ]
}

/// `φ = a sin(b x_i + c) + d x_j x_k`, small enough to keep things tame.
pub fn random_conformal_factor(rng: &mut ChaCha8Rng, n: usize) -> Expr {
    let x = |rng: &mut ChaCha8Rng| Expr::ident(format!("x{}", rng.gen_range(1..=n)));
    let r = |rng: &mut ChaCha8Rng, s: f64| Expr::num((rng.gen_range(-s..s) * 1e3_f64).round() / 1e3);
    let a = r(rng, 0.4);
    let b = r(rng, 2.0);
    let c = r(rng, 1.0);
    let d = r(rng, 0.3);
    let xi = x(rng);
    let xj = x(rng);
    let xk = x(rng);
    Expr::binary(
        BinOp::Add,
        Expr::binary(BinOp::Mul, a, Expr::call(Func::Sin, Expr::binary(BinOp::Add, Expr::binary(BinOp::Mul, b, xi), c))),
        Expr::binary(BinOp::Mul, d, Expr::binary(BinOp::Mul, xj, xk)),
    )
}

/// Every suite, as run by the `selftest` command.
pub fn run_selftest(seed: u64) -> Vec<SuiteResult> {
    let mut out = vec![jet_ring_laws(seed, 200), chain_rule(seed, 50)];
    out.extend(curvature_suites(seed, 6, 3));
    out.extend(conformal_suites(seed, 4, 3));
    out
}
