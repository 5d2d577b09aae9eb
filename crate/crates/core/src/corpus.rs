//! Closed-form metric generators used as oracles, and the warped-product
//! identity checks.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::curvature::{bundle_at, kulkarni_nomizu, CurvatureError, Tensor};
use crate::expr::{parse_expr, BinOp, Expr, ExprKind, Func};
use crate::metric::{DomainHint, MetricDefinition};
use crate::sample::Sampler;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenerateError {
    #[error("bad parameters: {0}")]
    BadParams(String),
    #[error("expected a {expected} spec")]
    BadKind { expected: &'static str },
    #[error(transparent)]
    Curvature(#[from] CurvatureError),
}

/// Recipe for a corpus metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    Flat {
        dim: usize,
    },
    /// Round sphere of radius `radius` in polar coordinates.
    Sphere {
        dim: usize,
        radius: f64,
    },
    Product {
        factors: Vec<GeneratorSpec>,
    },
    /// `dt^2 + f(t)^2 g_base`, `f` an expression in `t`.
    Warped {
        warp: String,
        base: Box<GeneratorSpec>,
        t_range: (f64, f64),
    },
    /// The homogeneous Sasaki–Einstein metric on `T^{1,1}`.
    T11,
    /// Flat `R^2` times the Riemannian Schwarzschild metric.
    SchwarzschildProduct {
        mass: f64,
        r_range: (f64, f64),
    },
    /// `e^{2 phi} g_inner`, `phi` an expression in the inner coordinates.
    ConformalRescale {
        phi: String,
        inner: Box<GeneratorSpec>,
    },
}

impl GeneratorSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            GeneratorSpec::Flat { .. } => "flat",
            GeneratorSpec::Sphere { .. } => "sphere",
            GeneratorSpec::Product { .. } => "product",
            GeneratorSpec::Warped { .. } => "warped",
            GeneratorSpec::T11 => "t11",
            GeneratorSpec::SchwarzschildProduct { .. } => "schwarzschild_product",
            GeneratorSpec::ConformalRescale { .. } => "conformal_rescale",
        }
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("specs serialise")
    }

    /// First 8 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash8(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().take(4).map(|b| format!("{b:02x}")).collect()
    }

    pub fn file_name(&self) -> String {
        format!("{}_{}.metric", self.kind(), self.hash8())
    }

    pub fn sphere(dim: usize, radius: f64) -> Self {
        GeneratorSpec::Sphere { dim, radius }
    }

    pub fn product(factors: Vec<GeneratorSpec>) -> Self {
        GeneratorSpec::Product { factors }
    }

    pub fn rescale(phi: &str, inner: GeneratorSpec) -> Self {
        GeneratorSpec::ConformalRescale {
            phi: phi.to_string(),
            inner: Box::new(inner),
        }
    }

    /// `S^2(r) x S^2(r)` with `r = 1/sqrt(3)`: Einstein with `Ric = 3g`.
    pub fn s2xs2() -> Self {
        let r = 1.0 / 3f64.sqrt();
        GeneratorSpec::product(vec![GeneratorSpec::sphere(2, r), GeneratorSpec::sphere(2, r)])
    }

    /// `dt^2 + sinh(t)^2 (S^2 x S^2)`: Einstein with `Ric = -4g`.
    pub fn warped_sinh() -> Self {
        GeneratorSpec::Warped {
            warp: "sinh(t)".into(),
            base: Box::new(GeneratorSpec::s2xs2()),
            t_range: (0.5, 2.0),
        }
    }
}

/// The standard corpus: fixed file names and their recipes.
pub fn standard_corpus() -> Vec<(&'static str, GeneratorSpec)> {
    vec![
        ("flat4.metric", GeneratorSpec::Flat { dim: 4 }),
        ("sphere4.metric", GeneratorSpec::sphere(4, 1.0)),
        ("s2xs2.metric", GeneratorSpec::s2xs2()),
        (
            "s2xs2_rescaled.metric",
            GeneratorSpec::rescale("0.3*sin(th1)*cos(ph2)", GeneratorSpec::s2xs2()),
        ),
        ("warped_sinh.metric", GeneratorSpec::warped_sinh()),
        ("t11.metric", GeneratorSpec::T11),
        (
            "t11_rescaled.metric",
            GeneratorSpec::rescale("0.2*sin(th1)*cos(ph2) + 0.1*cos(th2)", GeneratorSpec::T11),
        ),
        (
            "r2_schwarzschild.metric",
            GeneratorSpec::SchwarzschildProduct {
                mass: 1.0,
                r_range: (3.0, 10.0),
            },
        ),
    ]
}

/// A random smooth metric on `(-1, 1)^n` (coordinates `x1..xn`): diagonal
/// entries `2 + 0.3 sin(..) + 0.2 x²`, small polynomial/trigonometric
/// off-diagonal entries. Diagonally dominant, hence positive definite.
pub fn random_metric(n: usize, seed: u64) -> MetricDefinition {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let coords: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    let mut def = blank("random", coords.clone());
    let bound = 0.8 / (n - 1).max(1) as f64;
    let c = |rng: &mut rand_chacha::ChaCha8Rng, lo: f64, hi: f64| -> f64 {
        // Round so the rendered text reproduces the values exactly.
        (rng.gen_range(lo..hi) * 1e4_f64).round() / 1e4
    };
    for i in 0..n {
        let (j, k) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let (a, b, q) = (c(&mut rng, -1.5, 1.5), c(&mut rng, -1.0, 1.0), c(&mut rng, 0.0, 0.2));
        let e = add(
            add(num(2.0), mul(num(0.3), call(Func::Sin, add(mul(num(a), ident(&coords[j])), num(b))))),
            mul(num(q), pow(ident(&coords[k]), 2.0)),
        );
        set_sym(&mut def, i, i, e);
        for jj in i + 1..n {
            let (u, v) = (rng.gen_range(0..n), rng.gen_range(0..n));
            let amp = c(&mut rng, -bound, bound) * 0.5;
            let w = c(&mut rng, -2.0, 2.0);
            let e = if rng.gen_bool(0.5) {
                mul(num(amp), add(mul(ident(&coords[u]), ident(&coords[v])), num(c(&mut rng, -0.9, 0.9))))
            } else {
                mul(num(amp), add(call(Func::Cos, mul(num(w), ident(&coords[u]))), mul(num(0.5), ident(&coords[v]))))
            };
            set_sym(&mut def, i, jj, e);
        }
    }
    def
}

fn num(v: f64) -> Expr {
    Expr::num(v)
}

fn ident(s: &str) -> Expr {
    Expr::ident(s)
}

fn mul(a: Expr, b: Expr) -> Expr {
    Expr::binary(BinOp::Mul, a, b)
}

fn add(a: Expr, b: Expr) -> Expr {
    Expr::binary(BinOp::Add, a, b)
}

fn pow(a: Expr, p: f64) -> Expr {
    Expr::binary(BinOp::Pow, a, num(p))
}

fn call(f: Func, a: Expr) -> Expr {
    Expr::call(f, a)
}

fn hint(lo: f64, hi: f64) -> Option<DomainHint> {
    Some(DomainHint {
        lo: num(lo),
        hi: num(hi),
        lo_value: lo,
        hi_value: hi,
    })
}

fn blank(name: &str, coords: Vec<String>) -> MetricDefinition {
    let n = coords.len();
    MetricDefinition {
        name: name.to_string(),
        coords,
        constants: Vec::new(),
        constant_values: HashMap::new(),
        domain: vec![None; n],
        scalars: Vec::new(),
        entries: vec![vec![num(0.0); n]; n],
    }
}

fn set_sym(def: &mut MetricDefinition, i: usize, j: usize, e: Expr) {
    def.entries[i][j] = e.clone();
    def.entries[j][i] = e;
}

/// Builds the metric definition described by `spec`.
pub fn generate(spec: &GeneratorSpec) -> Result<MetricDefinition, GenerateError> {
    let mut def = build(spec)?;
    def.name = spec.kind().to_string();
    Ok(def)
}

fn build(spec: &GeneratorSpec) -> Result<MetricDefinition, GenerateError> {
    match spec {
        GeneratorSpec::Flat { dim } => {
            if !(1..=8).contains(dim) {
                return Err(GenerateError::BadParams(format!("flat dimension {dim}")));
            }
            let coords = (1..=*dim).map(|i| format!("x{i}")).collect();
            let mut def = blank("flat", coords);
            for i in 0..*dim {
                def.entries[i][i] = num(1.0);
            }
            Ok(def)
        }
        GeneratorSpec::Sphere { dim, radius } => {
            if !(*radius > 0.0) || !(1..=8).contains(dim) {
                return Err(GenerateError::BadParams(format!("sphere dim {dim}, radius {radius}")));
            }
            let d = *dim;
            let coords: Vec<String> = if d == 2 {
                vec!["th".into(), "ph".into()]
            } else {
                (1..d).map(|i| format!("th{i}")).chain(std::iter::once("ph".to_string())).collect()
            };
            let mut def = blank("sphere", coords.clone());
            let r2 = radius * radius;
            // g_ii = r^2 * prod_{j<i} sin(th_j)^2
            for i in 0..d {
                let mut e = num(r2);
                for c in coords.iter().take(i) {
                    e = mul(e, pow(call(Func::Sin, ident(c)), 2.0));
                }
                def.entries[i][i] = e;
            }
            for i in 0..d - 1 {
                def.domain[i] = hint(0.3, 2.8);
            }
            def.domain[d - 1] = hint(-3.0, 3.0);
            Ok(def)
        }
        GeneratorSpec::Product { factors } => {
            if factors.len() < 2 {
                return Err(GenerateError::BadParams("product needs at least two factors".into()));
            }
            let parts: Vec<MetricDefinition> = factors.iter().map(build).collect::<Result<_, _>>()?;
            let mut all: Vec<&String> = parts.iter().flat_map(|p| p.coords.iter()).collect();
            all.sort();
            let clash = all.windows(2).any(|w| w[0] == w[1]);
            let mut coords = Vec::new();
            let mut renamed = Vec::new();
            for (fi, p) in parts.iter().enumerate() {
                let mut map = HashMap::new();
                for c in &p.coords {
                    let new = if clash {
                        if c.ends_with(|ch: char| ch.is_ascii_digit()) {
                            format!("{c}_{}", fi + 1)
                        } else {
                            format!("{c}{}", fi + 1)
                        }
                    } else {
                        c.clone()
                    };
                    map.insert(c.clone(), ident(&new));
                    coords.push(new);
                }
                renamed.push(map);
            }
            let mut def = blank("product", coords);
            let mut off = 0;
            for (p, map) in parts.iter().zip(&renamed) {
                for (k, v) in p.constants.iter() {
                    merge_constant(&mut def, k, v)?;
                }
                let m = p.dim();
                for i in 0..m {
                    for j in 0..m {
                        def.entries[off + i][off + j] = p.entries[i][j].substitute(map);
                    }
                    def.domain[off + i] = p.domain[i].clone();
                }
                off += m;
            }
            Ok(def)
        }
        GeneratorSpec::Warped { warp, base, t_range } => {
            let f = parse_expr(warp).map_err(|e| GenerateError::BadParams(format!("warp: {e}")))?;
            if f.identifiers().iter().any(|s| s != "t" && s != "pi" && s != "e") {
                return Err(GenerateError::BadParams("warp must depend on t only".into()));
            }
            let (lo, hi) = *t_range;
            if !(lo < hi) {
                return Err(GenerateError::BadParams("empty t range".into()));
            }
            // The warp must stay away from zero on the closed interval.
            let coords = vec!["t".to_string()];
            let b = crate::expr::Bindings {
                coords: &coords,
                constants: None,
                scalars: None,
            };
            let mut first_sign = None;
            for s in 0..=200 {
                let t = lo + (hi - lo) * s as f64 / 200.0;
                let v = crate::expr::value_eval(&f, &b, &[t]).map_err(|e| GenerateError::BadParams(e.to_string()))?;
                let sign = v > 0.0;
                if !(v.abs() > 1e-8) || *first_sign.get_or_insert(sign) != sign {
                    return Err(GenerateError::BadParams(format!("warp vanishes near t = {t}")));
                }
            }
            let inner = build(base)?;
            if inner.coords.iter().any(|c| c == "t") {
                return Err(GenerateError::BadParams("base already uses coordinate t".into()));
            }
            let m = inner.dim();
            let mut coords = vec!["t".to_string()];
            coords.extend(inner.coords.iter().cloned());
            let mut def = blank("warped", coords);
            def.constants = inner.constants.clone();
            def.constant_values = inner.constant_values.clone();
            def.entries[0][0] = num(1.0);
            def.domain[0] = hint(lo, hi);
            let f2 = pow(f, 2.0);
            for i in 0..m {
                for j in 0..m {
                    let e = &inner.entries[i][j];
                    def.entries[1 + i][1 + j] = if e.is_zero_literal() { e.clone() } else { mul(f2.clone(), e.clone()) };
                }
                def.domain[1 + i] = inner.domain[i].clone();
            }
            Ok(def)
        }
        GeneratorSpec::T11 => {
            let coords: Vec<String> = ["psi", "th1", "ph1", "th2", "ph2"].iter().map(|s| s.to_string()).collect();
            let mut def = blank("t11", coords);
            let ninth = || Expr::binary(BinOp::Div, num(1.0), num(9.0));
            let sixth = || Expr::binary(BinOp::Div, num(1.0), num(6.0));
            let c = |s: &str| call(Func::Cos, ident(s));
            let s2 = |s: &str| pow(call(Func::Sin, ident(s)), 2.0);
            set_sym(&mut def, 0, 0, ninth());
            set_sym(&mut def, 0, 2, mul(ninth(), c("th1")));
            set_sym(&mut def, 0, 4, mul(ninth(), c("th2")));
            set_sym(&mut def, 1, 1, sixth());
            set_sym(&mut def, 2, 2, add(mul(ninth(), pow(c("th1"), 2.0)), mul(sixth(), s2("th1"))));
            set_sym(&mut def, 2, 4, mul(ninth(), mul(c("th1"), c("th2"))));
            set_sym(&mut def, 3, 3, sixth());
            set_sym(&mut def, 4, 4, add(mul(ninth(), pow(c("th2"), 2.0)), mul(sixth(), s2("th2"))));
            def.domain = vec![hint(0.0, 6.0), hint(0.3, 2.8), hint(-3.0, 3.0), hint(0.3, 2.8), hint(-3.0, 3.0)];
            Ok(def)
        }
        GeneratorSpec::SchwarzschildProduct { mass, r_range } => {
            let (lo, hi) = *r_range;
            if !(*mass > 0.0) || !(lo > 2.0 * mass) || !(lo < hi) {
                return Err(GenerateError::BadParams(format!(
                    "need 2m < r_lo < r_hi, got m = {mass}, r in ({lo}, {hi})"
                )));
            }
            let coords: Vec<String> = ["x1", "x2", "tau", "r", "th", "ph"].iter().map(|s| s.to_string()).collect();
            let mut def = blank("schwarzschild_product", coords);
            def.constants.push(("m".into(), num(*mass)));
            def.constant_values.insert("m".into(), *mass);
            // lapse = 1 - 2m/r
            let lapse = Expr::binary(
                BinOp::Sub,
                num(1.0),
                Expr::binary(BinOp::Div, mul(num(2.0), ident("m")), ident("r")),
            );
            def.entries[0][0] = num(1.0);
            def.entries[1][1] = num(1.0);
            def.entries[2][2] = lapse.clone();
            def.entries[3][3] = pow(lapse, -1.0);
            def.entries[4][4] = pow(ident("r"), 2.0);
            def.entries[5][5] = mul(pow(ident("r"), 2.0), pow(call(Func::Sin, ident("th")), 2.0));
            def.domain = vec![
                hint(-1.0, 1.0),
                hint(-1.0, 1.0),
                hint(-1.0, 1.0),
                hint(lo, hi),
                hint(0.3, 2.8),
                hint(-3.0, 3.0),
            ];
            Ok(def)
        }
        GeneratorSpec::ConformalRescale { phi, inner } => {
            let p = parse_expr(phi).map_err(|e| GenerateError::BadParams(format!("phi: {e}")))?;
            let base = build(inner)?;
            for id in p.identifiers() {
                let known = base.coords.contains(&id) || base.constant_values.contains_key(&id) || id == "pi" || id == "e";
                if !known {
                    return Err(GenerateError::BadParams(format!("phi uses unknown symbol `{id}`")));
                }
            }
            Ok(conformal_rescale(&base, &p))
        }
    }
}

fn merge_constant(def: &mut MetricDefinition, k: &str, v: &Expr) -> Result<(), GenerateError> {
    if let Some((_, existing)) = def.constants.iter().find(|(n, _)| n == k) {
        if existing != v {
            return Err(GenerateError::BadParams(format!("conflicting constant `{k}`")));
        }
        return Ok(());
    }
    let value = crate::expr::value_eval(
        v,
        &crate::expr::Bindings {
            coords: &[],
            constants: Some(&def.constant_values),
            scalars: None,
        },
        &[],
    )
    .map_err(|e| GenerateError::BadParams(e.to_string()))?;
    def.constants.push((k.to_string(), v.clone()));
    def.constant_values.insert(k.to_string(), value);
    Ok(())
}

/// `e^{2 phi} g`, entry by entry. Rescaling an entry of the form
/// `exp(2*p)*E` by `-p` returns `E` unchanged.
pub fn conformal_rescale(def: &MetricDefinition, phi: &Expr) -> MetricDefinition {
    let mut out = def.clone();
    let target = phi.folded();
    for row in out.entries.iter_mut() {
        for e in row.iter_mut() {
            if e.is_zero_literal() {
                continue;
            }
            if let Some((p0, inner)) = split_rescaled(e) {
                if Expr::neg(p0.clone()).folded() == target || p0.folded() == Expr::neg(target.clone()).folded() {
                    *e = inner;
                    continue;
                }
            }
            *e = mul(call(Func::Exp, mul(num(2.0), phi.clone())), e.clone());
        }
    }
    out
}

fn split_rescaled(e: &Expr) -> Option<(Expr, Expr)> {
    if let ExprKind::Binary(BinOp::Mul, a, inner) = &e.kind {
        if let ExprKind::Call(Func::Exp, arg) = &a.kind {
            if let ExprKind::Binary(BinOp::Mul, two, p) = &arg.kind {
                if matches!(two.kind, ExprKind::Num(v) if v == 2.0) {
                    return Some(((**p).clone(), (**inner).clone()));
                }
            }
        }
    }
    None
}

/// Canonical file text for a spec: a provenance comment plus the rendering.
pub fn render_spec(spec: &GeneratorSpec) -> Result<String, GenerateError> {
    let def = generate(spec)?;
    Ok(format!(
        "# generated by weylscope {}\n# spec {}\n# hash {}\n{}",
        env!("CARGO_PKG_VERSION"),
        spec.canonical_json(),
        spec.hash8(),
        def.render()
    ))
}

// ---------------------------------------------------------------------------
// Warped product identities

#[derive(Debug, Clone, Serialize)]
pub struct WarpedIdentities {
    /// Tangential curvature against `f^2 R_base + (f'^2 / 2f^2) g⋆g`.
    pub tangential: f64,
    /// `R(X,Y)∂_t = 0`.
    pub mixed: f64,
    /// `R(X,∂_t)∂_t = -(f''/f) X`.
    pub radial: f64,
    /// `f'^2 + ρ f^2 - ρ_base` (max abs over samples).
    pub warp_equation: f64,
    /// `(t, f'^2 + ρ f^2 - ρ_base)` per sample.
    pub warp_curve: Vec<(f64, f64)>,
}

impl WarpedIdentities {
    pub fn curvature_max(&self) -> f64 {
        self.tangential.max(self.mixed).max(self.radial)
    }
}

/// Checks the warped-product curvature identities on seeded samples.
pub fn warped_identities_check(spec: &GeneratorSpec, samples: usize, seed: u64) -> Result<WarpedIdentities, GenerateError> {
    let GeneratorSpec::Warped { warp, base, .. } = spec else {
        return Err(GenerateError::BadKind { expected: "warped" });
    };
    let def = generate(spec)?;
    let base_def = generate(base)?;
    let f_expr = parse_expr(warp).map_err(|e| GenerateError::BadParams(e.to_string()))?;
    let sampler = Sampler::for_metric(&def, seed);
    let n = def.dim();
    let m = n - 1;
    let mut out = WarpedIdentities {
        tangential: 0.0,
        mixed: 0.0,
        radial: 0.0,
        warp_equation: 0.0,
        warp_curve: Vec::new(),
    };
    for i in 0..samples {
        let p = sampler.point(i);
        let b = bundle_at(&def, &p)?;
        let bb = bundle_at(&base_def, &p[1..])?;
        let fj = def.eval_expr(&f_expr, &p).map_err(CurvatureError::from)?;
        let (f, f1, f2) = (fj.value(), fj.d1(0), fj.d2(0, 0));
        // Tangential block.
        let gt = Tensor::from_fn(m, 2, |x| b.g[(1 + x[0], 1 + x[1])]);
        let gg = kulkarni_nomizu(&gt, &gt)?;
        for a in 0..m {
            for c in 0..m {
                for d in 0..m {
                    for e in 0..m {
                        let want = f * f * bb.riemann.at4(a, c, d, e) + f1 * f1 / (2.0 * f * f) * gg.at4(a, c, d, e);
                        let got = b.riemann.at4(1 + a, 1 + c, 1 + d, 1 + e);
                        out.tangential = out.tangential.max((got - want).abs());
                    }
                }
            }
        }
        for a in 0..n {
            for c in 0..n {
                for d in 0..n {
                    if a >= 1 && c >= 1 {
                        out.mixed = out.mixed.max(b.riemann.at4(a, c, 0, d).abs());
                    }
                }
                if a >= 1 {
                    let want = -f2 / f * b.g[(a, c)];
                    out.radial = out.radial.max((b.riemann.at4(a, 0, 0, c) - want).abs());
                }
            }
        }
        let w = f1 * f1 + b.rho * f * f - bb.rho;
        out.warp_equation = out.warp_equation.max(w.abs());
        out.warp_curve.push((p[0], w));
    }
    Ok(out)
}
