//! Command orchestration for the `weylscope` binary: parse → survey →
//! classify → verify, with a JSON report envelope.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use weylscope::corpus::{render_spec, standard_corpus, GeneratorSpec};
use weylscope::detect::{
    classify, cspace_transform_check, mean_curvature_transform_check, sasaki_check, ClassifyConfig, DetectError,
    TransversalClass, Verdict,
};
use weylscope::expr::parse_expr;
use weylscope::frame::{degeneracy_survey, kernel_at, ExceptionalPoint, FrameConfig};
use weylscope::linalg::orthonormal_frame;
use weylscope::metric::{parse_metric, MetricDefinition};
use weylscope::selftest::run_selftest;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Exit statuses.
pub const EXIT_OK: i32 = 0;
pub const EXIT_NEGATIVE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Exceptional fraction above which a run counts as a numerical failure.
pub const MAX_EXCEPTIONAL_FRACTION: f64 = 0.2;

/// `verify` passes when the divergence identity holds to this relative
/// accuracy and the mean-curvature identity to `VERIFY_MEAN_TOL`.
pub const VERIFY_DIVERGENCE_TOL: f64 = 1e-6;
pub const VERIFY_MEAN_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Analyze { input: PathBuf },
    Classify { input: PathBuf },
    Verify { input: PathBuf, phi: String },
    Sasaki { input: PathBuf },
    Selftest,
    /// Writes one corpus file, or the whole standard corpus when `spec` is
    /// `None`.
    Generate {
        spec: Option<GeneratorSpec>,
        dir: PathBuf,
        name: Option<String>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Analyze { .. } => "analyze",
            Command::Classify { .. } => "classify",
            Command::Verify { .. } => "verify",
            Command::Sasaki { .. } => "sasaki",
            Command::Selftest => "selftest",
            Command::Generate { .. } => "generate",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub samples: usize,
    pub seed: u64,
    pub verify_samples: usize,
    pub tol_rank: Option<f64>,
    pub tol_field: Option<f64>,
    pub step: Option<f64>,
    pub min_gap: Option<f64>,
    pub per_sample: bool,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        RunConfig {
            command,
            samples: 100,
            seed: 42,
            verify_samples: 20,
            tol_rank: None,
            tol_field: None,
            step: None,
            min_gap: None,
            per_sample: false,
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.samples < 1 {
            return Err("--samples must be at least 1".into());
        }
        for (name, v) in [
            ("--tol-rank", self.tol_rank),
            ("--tol-field", self.tol_field),
            ("--step", self.step),
            ("--min-gap", self.min_gap),
        ] {
            if let Some(x) = v {
                if !(x.is_finite() && x > 0.0) {
                    return Err(format!("{name} must be a positive number, got {x}"));
                }
            }
        }
        Ok(())
    }

    pub fn classify_config(&self) -> ClassifyConfig {
        let d = FrameConfig::default();
        ClassifyConfig {
            samples: self.samples,
            seed: self.seed,
            verify_samples: self.verify_samples.min(self.samples).max(1),
            frame: FrameConfig {
                tol_rank: self.tol_rank.unwrap_or(d.tol_rank),
                min_gap: self.min_gap.unwrap_or(d.min_gap),
                step: self.step.unwrap_or(d.step),
                tol_field: self.tol_field.unwrap_or(d.tol_field),
            },
            per_sample: self.per_sample,
            ..ClassifyConfig::default()
        }
    }
}

/// Exit status, report text and diagnostics of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub report: Option<String>,
    pub diagnostics: Vec<String>,
}

impl RunOutcome {
    fn fail(code: i32, message: String) -> Self {
        RunOutcome {
            exit_code: code,
            report: None,
            diagnostics: vec![message],
        }
    }
}

#[derive(Debug, Serialize, Default)]
struct Residuals {
    einstein: Option<f64>,
    rot: Option<f64>,
    frobenius: Option<f64>,
    contact: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Envelope {
    tool_version: &'static str,
    command: &'static str,
    input_hash: Option<String>,
    config: Value,
    rank_histogram: Option<BTreeMap<usize, usize>>,
    transversal_class: Option<TransversalClass>,
    verdict: Option<Value>,
    residuals: Residuals,
    exceptional_points: Vec<ExceptionalPoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    per_sample: Option<Value>,
    details: Value,
}

impl Envelope {
    fn new(command: &'static str, input_hash: Option<String>, config: Value) -> Self {
        Envelope {
            tool_version: TOOL_VERSION,
            command,
            input_hash,
            config,
            rank_histogram: None,
            transversal_class: None,
            verdict: None,
            residuals: Residuals::default(),
            exceptional_points: Vec::new(),
            per_sample: None,
            details: Value::Null,
        }
    }

    fn render(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialise");
        s.push('\n');
        s
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn load(path: &Path) -> Result<(MetricDefinition, String), RunOutcome> {
    let bytes = std::fs::read(path).map_err(|e| RunOutcome::fail(EXIT_CONFIG, format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| RunOutcome::fail(EXIT_CONFIG, format!("{}: not valid UTF-8", path.display())))?;
    let def = parse_metric(&text).map_err(|e| RunOutcome::fail(EXIT_CONFIG, format!("{}: {e}", path.display())))?;
    Ok((def, sha256_hex(&bytes)))
}

fn config_echo(cc: &ClassifyConfig, extra: Option<(&str, Value)>) -> Value {
    let mut v = serde_json::to_value(cc).expect("config serialises");
    if let (Some((k, x)), Some(obj)) = (extra, v.as_object_mut()) {
        obj.insert(k.to_string(), x);
    }
    v
}

fn exceptional_exit(fraction: f64, positive: bool) -> i32 {
    if fraction > MAX_EXCEPTIONAL_FRACTION {
        EXIT_NUMERICAL
    } else if positive {
        EXIT_OK
    } else {
        EXIT_NEGATIVE
    }
}

/// Runs one command.
pub fn run(config: &RunConfig) -> RunOutcome {
    if let Err(e) = config.validate() {
        return RunOutcome::fail(EXIT_CONFIG, e);
    }
    match &config.command {
        Command::Analyze { input } => analyze(config, input),
        Command::Classify { input } => run_classify(config, input),
        Command::Verify { input, phi } => verify(config, input, phi),
        Command::Sasaki { input } => sasaki(config, input),
        Command::Selftest => selftest(config),
        Command::Generate { spec, dir, name } => generate(spec.as_ref(), dir, name.as_deref()),
    }
}

fn analyze(config: &RunConfig, input: &Path) -> RunOutcome {
    let (def, hash) = match load(input) {
        Ok(x) => x,
        Err(o) => return o,
    };
    let cc = config.classify_config();
    let sampler = cc.sampler(&def);
    let survey = degeneracy_survey(&def, &sampler, cc.samples, &cc.frame);
    let mut rows = Vec::new();
    for i in 0..cc.samples {
        let p = sampler.point(i);
        if let Ok((b, f)) = kernel_at(&def, &p, &cc.frame) {
            let e = orthonormal_frame(&b.g).expect("positive definite");
            rows.push(json!({
                "index": i,
                "point": p,
                "tau": b.tau,
                "rho": b.rho,
                "ricci_traceless": b.ricci_traceless.in_frame(&e).max_abs(),
                "weyl": b.weyl.in_frame(&e).max_abs(),
                "weyl_divergence": b.weyl_div.in_frame(&e).max_abs(),
                "kernel_rank": f.rank_k,
                "singular_values": f.sing_values,
            }));
        }
    }
    let mut env = Envelope::new("analyze", Some(hash), config_echo(&cc, None));
    env.rank_histogram = Some(survey.rank_histogram.clone());
    env.exceptional_points = survey.exceptional_points.clone();
    env.details = json!({
        "name": def.name,
        "dim": def.dim(),
        "coords": def.coords,
        "modal_rank": survey.modal_rank,
        "samples": rows,
    });
    RunOutcome {
        exit_code: exceptional_exit(survey.exceptional_fraction(), true),
        report: Some(env.render()),
        diagnostics: Vec::new(),
    }
}

fn run_classify(config: &RunConfig, input: &Path) -> RunOutcome {
    let (def, hash) = match load(input) {
        Ok(x) => x,
        Err(o) => return o,
    };
    let cc = config.classify_config();
    let report = classify(&def, &cc);
    let mut env = Envelope::new("classify", Some(hash), config_echo(&cc, None));
    env.rank_histogram = Some(report.survey.rank_histogram.clone());
    env.transversal_class = Some(report.transversal_class);
    env.verdict = Some(serde_json::to_value(report.verdict).expect("verdict serialises"));
    env.residuals = Residuals {
        einstein: report.einstein_residual,
        rot: report.rot_residual,
        frobenius: report.frobenius_residual,
        contact: report.contact_residual,
    };
    env.exceptional_points = report.exceptional_points.clone();
    if config.per_sample {
        env.per_sample = Some(serde_json::to_value(&report.per_sample).expect("samples serialise"));
    }
    env.details = json!({
        "name": def.name,
        "dim": report.dim,
        "rank_k": report.rank_k,
        "route": report.route,
        "scaling_sign": report.scaling_sign,
        "pde_stage": report.pde_stage,
        "notes": report.notes,
    });
    let mut diagnostics = Vec::new();
    let fraction = report.exceptional_fraction();
    if fraction > MAX_EXCEPTIONAL_FRACTION {
        diagnostics.push(format!(
            "{:.0}% of samples are exceptional (limit {:.0}%)",
            100.0 * fraction,
            100.0 * MAX_EXCEPTIONAL_FRACTION
        ));
    }
    RunOutcome {
        exit_code: exceptional_exit(fraction, report.verdict == Verdict::ConformallyEinstein),
        report: Some(env.render()),
        diagnostics,
    }
}

fn verify(config: &RunConfig, input: &Path, phi_text: &str) -> RunOutcome {
    let (def, hash) = match load(input) {
        Ok(x) => x,
        Err(o) => return o,
    };
    let phi = match parse_expr(phi_text) {
        Ok(e) => e,
        Err(e) => return RunOutcome::fail(EXIT_CONFIG, format!("--phi: {e}")),
    };
    let unknown: Vec<String> = phi
        .identifiers()
        .into_iter()
        .filter(|s| !def.coords.contains(s) && !def.constant_values.contains_key(s) && def.scalar(s).is_none())
        .filter(|s| weylscope::expr::builtin_constant(s).is_none())
        .collect();
    if !unknown.is_empty() {
        return RunOutcome::fail(EXIT_CONFIG, format!("--phi: unknown symbols {}", unknown.join(", ")));
    }
    let cc = config.classify_config();
    let sampler = cc.sampler(&def);
    let samples = cc.verify_samples;
    let mut env = Envelope::new("verify", Some(hash), config_echo(&cc, Some(("phi", json!(phi_text)))));
    let mut diagnostics = Vec::new();
    let cspace = match cspace_transform_check(&def, &phi, &sampler, samples) {
        Ok(c) => c,
        Err(e) => return RunOutcome::fail(EXIT_NUMERICAL, format!("divergence check failed: {e}")),
    };
    let survey = degeneracy_survey(&def, &sampler, samples, &cc.frame);
    env.rank_histogram = Some(survey.rank_histogram.clone());
    env.exceptional_points = survey.exceptional_points.clone();
    let k = survey.modal_rank;
    let mean = if k >= 1 && k < def.dim() {
        match mean_curvature_transform_check(&def, &phi, &sampler, samples, &cc.frame) {
            Ok(m) => Some(m),
            Err(e) => {
                diagnostics.push(format!("mean-curvature check skipped: {e}"));
                None
            }
        }
    } else {
        None
    };
    let ok = cspace.residual <= VERIFY_DIVERGENCE_TOL && mean.as_ref().is_none_or(|m| m.residual <= VERIFY_MEAN_TOL);
    env.verdict = Some(json!(if ok { "Consistent" } else { "Inconsistent" }));
    env.details = json!({
        "name": def.name,
        "divergence_transform": cspace,
        "mean_curvature_transform": mean,
    });
    RunOutcome {
        exit_code: exceptional_exit(survey.exceptional_fraction(), ok),
        report: Some(env.render()),
        diagnostics,
    }
}

fn sasaki(config: &RunConfig, input: &Path) -> RunOutcome {
    let (def, hash) = match load(input) {
        Ok(x) => x,
        Err(o) => return o,
    };
    let cc = config.classify_config();
    let mut env = Envelope::new("sasaki", Some(hash), config_echo(&cc, None));
    match sasaki_check(&def, &cc) {
        Ok(r) => {
            env.verdict = Some(json!(if r.pass { "ConformallyEinsteinSasaki" } else { "NotConformallyEinsteinSasaki" }));
            env.residuals = Residuals {
                einstein: Some(r.cond_einstein.value),
                rot: None,
                frobenius: None,
                contact: Some(r.cond_contact.value),
            };
            env.exceptional_points = r.exceptional_points.clone();
            // Without a contact form the later conditions are undefined
            // everywhere; that is a negative answer, not a numerical failure.
            let fraction = if !r.cond_contact.pass {
                0.0
            } else {
                let mut idx: Vec<usize> = r.exceptional_points.iter().map(|e| e.index).collect();
                idx.dedup();
                idx.len() as f64 / cc.verify_samples.max(1) as f64
            };
            env.details = serde_json::to_value(&r).expect("report serialises");
            RunOutcome {
                exit_code: exceptional_exit(fraction, r.pass),
                report: Some(env.render()),
                diagnostics: Vec::new(),
            }
        }
        Err(e @ DetectError::EvenDimension(_)) => RunOutcome::fail(EXIT_CONFIG, e.to_string()),
        Err(e) => {
            env.verdict = Some(json!("NotApplicable"));
            env.details = json!({ "error": e.to_string() });
            RunOutcome {
                exit_code: EXIT_NEGATIVE,
                report: Some(env.render()),
                diagnostics: vec![e.to_string()],
            }
        }
    }
}

fn selftest(config: &RunConfig) -> RunOutcome {
    let suites = run_selftest(config.seed);
    let all = suites.iter().all(|s| s.passed);
    let diagnostics = suites
        .iter()
        .map(|s| format!("{} {} (worst {:.2e}, tol {:.0e})", if s.passed { "ok  " } else { "FAIL" }, s.name, s.worst, s.tolerance))
        .collect();
    let mut env = Envelope::new("selftest", None, json!({ "seed": config.seed }));
    env.verdict = Some(json!(if all { "Pass" } else { "Fail" }));
    env.details = json!({ "suites": suites });
    RunOutcome {
        exit_code: if all { EXIT_OK } else { EXIT_NEGATIVE },
        report: Some(env.render()),
        diagnostics,
    }
}

fn generate(spec: Option<&GeneratorSpec>, dir: &Path, name: Option<&str>) -> RunOutcome {
    let jobs: Vec<(String, GeneratorSpec)> = match spec {
        Some(s) => vec![(name.map(str::to_string).unwrap_or_else(|| s.file_name()), s.clone())],
        None => standard_corpus().into_iter().map(|(n, s)| (n.to_string(), s)).collect(),
    };
    if let Err(e) = std::fs::create_dir_all(dir) {
        return RunOutcome::fail(EXIT_CONFIG, format!("{}: {e}", dir.display()));
    }
    let mut written = Vec::new();
    for (file, s) in jobs {
        let text = match render_spec(&s) {
            Ok(t) => t,
            Err(e) => return RunOutcome::fail(EXIT_CONFIG, format!("{}: {e}", s.kind())),
        };
        let path = dir.join(&file);
        if let Err(e) = std::fs::write(&path, &text) {
            return RunOutcome::fail(EXIT_CONFIG, format!("{}: {e}", path.display()));
        }
        written.push(json!({ "path": path.display().to_string(), "spec": s, "hash": sha256_hex(text.as_bytes()) }));
    }
    let mut env = Envelope::new("generate", None, Value::Null);
    env.details = json!({ "written": written });
    RunOutcome {
        exit_code: EXIT_OK,
        report: Some(env.render()),
        diagnostics: Vec::new(),
    }
}
