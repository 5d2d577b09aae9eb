//! Browser bindings: curvature at a point, the Weyl-kernel spectrum along a
//! segment, and a small classification run. Each entry point takes metric
//! text and returns a JSON string; errors come back as JS strings.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use weylscope::detect::{classify, ClassifyConfig};
use weylscope::frame::{kernel_at, FrameConfig};
use weylscope::linalg::orthonormal_frame;
use weylscope::metric::{parse_metric, MetricDefinition};

fn parse(text: &str) -> Result<MetricDefinition, String> {
    parse_metric(text).map_err(|e| e.to_string())
}

fn parse_point(def: &MetricDefinition, text: &str) -> Result<Vec<f64>, String> {
    let p: Vec<f64> = serde_json::from_str(text).map_err(|e| format!("point: {e}"))?;
    if p.len() != def.dim() {
        return Err(format!("point has {} components, metric has dimension {}", p.len(), def.dim()));
    }
    Ok(p)
}

/// Scalar curvature data and the Weyl kernel at one point.
pub fn curvature_summary_json(metric: &str, point: &str) -> Result<String, String> {
    let def = parse(metric)?;
    let p = parse_point(&def, point)?;
    let (b, f) = kernel_at(&def, &p, &FrameConfig::default()).map_err(|e| e.to_string())?;
    let e = orthonormal_frame(&b.g).ok_or("metric is not positive definite")?;
    let out = json!({
        "dim": def.dim(),
        "coords": def.coords,
        "tau": b.tau,
        "rho": b.rho,
        "ricci_traceless": b.ricci_traceless.in_frame(&e).max_abs(),
        "weyl": b.weyl.in_frame(&e).max_abs(),
        "weyl_divergence": b.weyl_div.in_frame(&e).max_abs(),
        "kernel_rank": f.rank_k,
        "singular_values": f.sing_values,
        "kernel": f.xi,
    });
    Ok(out.to_string())
}

/// Kernel singular values at `steps + 1` equally spaced points from `a` to `b`.
pub fn weyl_spectrum_along_json(metric: &str, a: &str, b: &str, steps: usize) -> Result<String, String> {
    let def = parse(metric)?;
    let a = parse_point(&def, a)?;
    let b = parse_point(&def, b)?;
    let steps = steps.clamp(1, 400);
    let cfg = FrameConfig::default();
    let rows: Vec<Value> = (0..=steps)
        .map(|i| {
            let t = i as f64 / steps as f64;
            let p: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + t * (y - x)).collect();
            match kernel_at(&def, &p, &cfg) {
                Ok((_, f)) => json!({ "t": t, "rank": f.rank_k, "singular_values": f.sing_values }),
                Err(e) => json!({ "t": t, "error": e.to_string() }),
            }
        })
        .collect();
    Ok(Value::Array(rows).to_string())
}

/// Full classification with a reduced sample budget.
pub fn classify_metric_json(metric: &str, samples: usize, seed: u64) -> Result<String, String> {
    let def = parse(metric)?;
    let samples = samples.clamp(1, 200);
    let cfg = ClassifyConfig {
        samples,
        seed,
        verify_samples: samples.min(8),
        ..ClassifyConfig::default()
    };
    serde_json::to_string(&classify(&def, &cfg)).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn curvature_summary(metric: &str, point: &str) -> Result<String, JsValue> {
    curvature_summary_json(metric, point).map_err(JsValue::from)
}

#[wasm_bindgen]
pub fn weyl_spectrum_along(metric: &str, a: &str, b: &str, steps: usize) -> Result<String, JsValue> {
    weyl_spectrum_along_json(metric, a, b, steps).map_err(JsValue::from)
}

#[wasm_bindgen]
pub fn classify_metric(metric: &str, samples: usize, seed: u64) -> Result<String, JsValue> {
    classify_metric_json(metric, samples, seed).map_err(JsValue::from)
}
