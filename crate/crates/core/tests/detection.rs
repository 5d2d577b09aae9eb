//! End-to-end detection on metrics with known answers.

use weylscope::corpus::{conformal_rescale, generate, warped_identities_check, GeneratorSpec};
use weylscope::curvature::{bundle_at, CurvatureBundle};
use weylscope::detect::{
    classify, listing_candidate, listing_field, mean_curvature_transform_check, rank1_candidate, sasaki_check,
    verify_conformal_einstein, CandidateField, ClassifyConfig, Route, ScalingSign, TransversalClass, Verdict,
};
use weylscope::expr::parse_expr;
use weylscope::frame::{frobenius_transversal, kappa_nullity_residual, kernel_at, mean_curvature_jet, FrameConfig};
use weylscope::linalg::orthonormal_frame;
use weylscope::metric::MetricDefinition;
use weylscope::sample::Sampler;

fn quick() -> ClassifyConfig {
    ClassifyConfig {
        samples: 16,
        verify_samples: 6,
        ..ClassifyConfig::default()
    }
}

/// `max |Ric − λg|` in an orthonormal frame.
fn einstein_gap(b: &CurvatureBundle, lambda: f64) -> f64 {
    let e = orthonormal_frame(&b.g).unwrap();
    let ric = b.ricci.in_frame(&e);
    let n = b.dim();
    let mut m: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let want = if i == j { lambda } else { 0.0 };
            m = m.max((ric.at2(i, j) - want).abs());
        }
    }
    m
}

fn sampler(def: &MetricDefinition, seed: u64) -> Sampler {
    Sampler::for_metric(def, seed).with_margin(0.02)
}

fn gradient(def: &MetricDefinition, f: &weylscope::expr::Expr, p: &[f64]) -> Vec<f64> {
    let j = def.eval_expr(f, p).unwrap();
    let ginv = def.values_at(p).unwrap().try_inverse().unwrap();
    let n = p.len();
    (0..n).map(|a| (0..n).map(|c| ginv[(a, c)] * j.d1(c)).sum()).collect()
}

#[test]
fn einstein_admission_gates() {
    let checks: [(GeneratorSpec, f64); 4] = [
        (GeneratorSpec::s2xs2(), 3.0),
        (GeneratorSpec::warped_sinh(), -4.0),
        (GeneratorSpec::T11, 4.0),
        (
            GeneratorSpec::SchwarzschildProduct {
                mass: 1.0,
                r_range: (3.0, 10.0),
            },
            0.0,
        ),
    ];
    for (spec, lambda) in checks {
        let def = generate(&spec).unwrap();
        let s = sampler(&def, 3);
        for i in 0..5 {
            let b = bundle_at(&def, &s.point(i)).unwrap();
            assert!(einstein_gap(&b, lambda) <= 1e-8, "{}: {}", spec.kind(), einstein_gap(&b, lambda));
        }
    }
}

#[test]
fn listing_recovers_the_inverse_conformal_factor() {
    let base = generate(&GeneratorSpec::s2xs2()).unwrap();
    let phis = ["0.3*sin(th1)*cos(ph2)", "0.2*th2 - 0.1*ph1^2", "0.25*cos(th1 + ph1) + 0.1*th2*ph2"];
    for phi_text in phis {
        let phi = parse_expr(phi_text).unwrap();
        let def = conformal_rescale(&base, &phi);
        let s = sampler(&def, 8);
        for i in 0..4 {
            let p = s.point(i);
            let sol = listing_candidate(&def, &p).unwrap();
            assert!(sol.unique);
            let want: Vec<f64> = gradient(&def, &phi, &p).iter().map(|v| -v).collect();
            let scale = want.iter().fold(1e-300f64, |m, v| m.max(v.abs()));
            let err = sol.x.iter().zip(&want).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err <= 1e-6 * scale, "{phi_text}: {err:e}");
        }
        let cfg = FrameConfig::default();
        let cand = listing_field(&def, &s.point(0), &cfg).unwrap();
        let v = verify_conformal_einstein(&def, &cand, &s, 8, &cfg);
        assert!(v.einstein_max <= 1e-6, "{phi_text}: {}", v.einstein_max);
        assert_eq!(v.verdict(), Verdict::ConformallyEinstein);
    }
}

#[test]
fn perturbed_candidates_are_rejected() {
    let base = generate(&GeneratorSpec::s2xs2()).unwrap();
    let def = conformal_rescale(&base, &parse_expr("0.3*sin(th1)*cos(ph2)").unwrap());
    let s = sampler(&def, 8);
    let cfg = FrameConfig::default();
    let cand = listing_field(&def, &s.point(0), &cfg).unwrap().perturbed(vec![0.1, 0.0, 0.0, 0.0]);
    let v = verify_conformal_einstein(&def, &cand, &s, 8, &cfg);
    assert!(v.einstein_max >= 1e-2, "{}", v.einstein_max);
    assert_eq!(v.verdict(), Verdict::NotConformallyEinstein);
    let zero = CandidateField::zero(4);
    assert!(verify_conformal_einstein(&def, &zero, &s, 8, &cfg).einstein_max >= 1e-2);
}

#[test]
fn listing_does_not_accept_random_metrics() {
    let def = weylscope::corpus::random_metric(4, 12);
    let r = classify(&def, &quick());
    assert_eq!(r.route, Some(Route::Listing));
    assert_eq!(r.verdict, Verdict::NotConformallyEinstein);
}

#[test]
fn reeb_field_is_geodesic_and_kernel_is_rank_one() {
    let def = generate(&GeneratorSpec::T11).unwrap();
    let s = sampler(&def, 4);
    for i in 0..5 {
        let (b, f) = kernel_at(&def, &s.point(i), &FrameConfig::default()).unwrap();
        assert_eq!(f.rank_k, 1);
        let fol = mean_curvature_jet(&b, &f);
        assert!(fol.geodesic_residual < 1e-9, "{}", fol.geodesic_residual);
        // ξ is a κ = ρ nullity vector on an Einstein space.
        assert!(kappa_nullity_residual(&b, &f.xi[0], b.rho) < 1e-9);
    }
}

#[test]
fn rank_one_candidate_is_consistent_across_pairs() {
    let def = generate(&GeneratorSpec::rescale("0.2*sin(th1)*cos(ph2) + 0.1*psi", GeneratorSpec::T11)).unwrap();
    let cfg = FrameConfig::default();
    let s = sampler(&def, 5);
    let p = s.point(0);
    let (_, f) = kernel_at(&def, &p, &cfg).unwrap();
    let cand = rank1_candidate(&def, &f, &p, &cfg).unwrap();
    let base = cand.base.as_ref().unwrap();
    assert!(base.pairs.len() >= 2);
    assert!(base.consistency_spread < 1e-5, "{}", base.consistency_spread);
    let v = verify_conformal_einstein(&def, &cand, &s, 4, &cfg);
    assert!(v.einstein_max <= 1e-4 && v.rot_max <= 1e-4, "{} {}", v.einstein_max, v.rot_max);
}

#[test]
fn sasaki_criteria_and_tanno() {
    let cfg = ClassifyConfig {
        verify_samples: 6,
        ..ClassifyConfig::default()
    };
    let t11 = generate(&GeneratorSpec::T11).unwrap();
    let r = sasaki_check(&t11, &cfg).unwrap();
    assert!(r.pass && r.cond_contact.pass && r.cond_omega_orthogonal.pass && r.cond_einstein.pass, "{r:?}");
    assert!(r.tanno_residual.unwrap() < 1e-6);

    let rescaled = generate(&GeneratorSpec::rescale("0.2*sin(th1)*cos(ph2)", GeneratorSpec::T11)).unwrap();
    let r = sasaki_check(&rescaled, &cfg).unwrap();
    assert!(r.pass, "{r:?}");
    assert!(r.cond_einstein.value <= 1e-4);

    let warped = generate(&GeneratorSpec::warped_sinh()).unwrap();
    let r = sasaki_check(&warped, &cfg).unwrap();
    assert!(!r.pass && !r.cond_contact.pass);

    let even = generate(&GeneratorSpec::s2xs2()).unwrap();
    assert!(sasaki_check(&even, &cfg).is_err());
}

#[test]
fn warped_example_identities() {
    let spec = GeneratorSpec::warped_sinh();
    let w = warped_identities_check(&spec, 10, 6).unwrap();
    assert!(w.curvature_max() <= 1e-7, "{w:?}");
    assert!(w.warp_equation <= 1e-12, "{}", w.warp_equation);

    let def = generate(&spec).unwrap();
    let s = sampler(&def, 6);
    for i in 0..5 {
        let (b, f) = kernel_at(&def, &s.point(i), &FrameConfig::default()).unwrap();
        assert_eq!(f.rank_k, 1);
        // ∂_t is a unit vector, so |g(ξ, ∂_t)| is the alignment cosine.
        let cos: f64 = (0..5).map(|c| b.g[(0, c)] * f.xi[0][c]).sum::<f64>().abs();
        assert!(cos >= 1.0 - 1e-8, "{cos}");
        assert!(kappa_nullity_residual(&b, &[1.0, 0.0, 0.0, 0.0, 0.0], -1.0) <= 1e-6);
    }
    let r = classify(&def, &quick());
    assert_eq!(r.rank_k, 1);
    assert_eq!(r.transversal_class, TransversalClass::Integrable);
    assert_eq!(r.verdict, Verdict::InconclusiveNegativeScaling);
}

#[test]
fn schwarzschild_product_splits() {
    let def = generate(&GeneratorSpec::SchwarzschildProduct {
        mass: 1.0,
        r_range: (3.0, 10.0),
    })
    .unwrap();
    let cfg = FrameConfig::default();
    let s = sampler(&def, 2);
    for i in 0..4 {
        let p = s.point(i);
        let (_, f) = kernel_at(&def, &p, &cfg).unwrap();
        assert_eq!(f.rank_k, 2);
        assert!(frobenius_transversal(&def, &f, &p, &cfg).unwrap() <= 1e-5);
    }
    let r = classify(&def, &quick());
    assert_eq!(r.verdict, Verdict::ConformallyEinstein);
    assert_eq!(r.scaling_sign, ScalingSign::Zero);
    let split = r.notes.iter().find(|n| n.key == "product_split").expect("product split note");
    assert!(split.value.unwrap() <= 1e-6);
}

#[test]
fn conformally_flat_and_rescaled_einstein_classify_positive() {
    for spec in [
        GeneratorSpec::sphere(4, 1.0),
        GeneratorSpec::rescale("0.3*sin(th1)*cos(ph2)", GeneratorSpec::s2xs2()),
    ] {
        let def = generate(&spec).unwrap();
        let r = classify(&def, &quick());
        assert_eq!(r.verdict, Verdict::ConformallyEinstein, "{}", spec.kind());
    }
}

#[test]
fn mean_curvature_transformation() {
    let cfg = FrameConfig::default();
    for (spec, phi) in [
        (GeneratorSpec::warped_sinh(), "0.2*sin(t + th1) + 0.1*ph1*ph2"),
        (GeneratorSpec::T11, "0.15*cos(th1 - ph2) + 0.05*psi*th2"),
    ] {
        let def = generate(&spec).unwrap();
        let r = mean_curvature_transform_check(&def, &parse_expr(phi).unwrap(), &sampler(&def, 9), 5, &cfg).unwrap();
        assert!(r.residual <= 1e-4, "{}: {r:?}", spec.kind());
    }
}

/// A gradient inside the kernel keeps the kernel geodesic.
#[test]
fn kernel_gradient_preserves_geodesic_kernel() {
    let def = generate(&GeneratorSpec::warped_sinh()).unwrap();
    let r = mean_curvature_transform_check(&def, &parse_expr("0.3*sin(t) + 0.1*t^2").unwrap(), &sampler(&def, 9), 5, &FrameConfig::default())
        .unwrap();
    assert!(r.original_geodesic_residual <= 1e-4);
    assert!(r.rescaled_geodesic_residual <= 1e-4, "{r:?}");
    // A transversal gradient does not.
    let r = mean_curvature_transform_check(&def, &parse_expr("0.3*sin(th1)").unwrap(), &sampler(&def, 9), 5, &FrameConfig::default())
        .unwrap();
    assert!(r.rescaled_geodesic_residual > 1e-2);
}
