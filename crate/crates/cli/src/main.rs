use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use weylscope::corpus::GeneratorSpec;
use weylscope_cli::{run, Command, RunConfig, EXIT_CONFIG};

/// Weyl kernel degeneracy analysis and conformally Einstein detection.
#[derive(Parser, Debug)]
#[command(name = "weylscope", version)]
struct Cli {
    /// Number of sample points.
    #[arg(long, global = true, default_value_t = 100)]
    samples: usize,
    /// Seed for the deterministic sampler.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Number of survey samples used to verify a candidate.
    #[arg(long, global = true, default_value_t = 20)]
    verify_samples: usize,
    /// Write the JSON report here instead of stdout.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// Include per-sample residuals in the report.
    #[arg(long, global = true)]
    per_sample: bool,
    /// Relative singular-value threshold for kernel ranks.
    #[arg(long, global = true)]
    tol_rank: Option<f64>,
    /// Tolerance for finite-difference quantities.
    #[arg(long, global = true)]
    tol_field: Option<f64>,
    /// Base finite-difference step.
    #[arg(long, global = true)]
    step: Option<f64>,
    /// Required singular-value gap ratio at the rank cut.
    #[arg(long, global = true)]
    min_gap: Option<f64>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Curvature summary and kernel-rank survey.
    Analyze { input: PathBuf },
    /// Full conformally Einstein classification.
    Classify { input: PathBuf },
    /// Check conformal transformation identities for e^{2 phi} g.
    Verify {
        input: PathBuf,
        #[arg(long)]
        phi: String,
    },
    /// Conformally Sasaki–Einstein test (odd dimension, rank-1 kernel).
    Sasaki { input: PathBuf },
    /// Run the internal identity suites.
    Selftest,
    /// Write corpus metrics.
    ///
    /// KIND is one of: standard, flat, sphere, t11, s2xs2, warped_sinh,
    /// schwarzschild_product. Use --spec for arbitrary JSON recipes.
    Generate {
        #[arg(default_value = "standard")]
        kind: String,
        #[arg(long, default_value_t = 4)]
        dim: usize,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long, default_value_t = 1.0)]
        mass: f64,
        /// Conformally rescale the generated metric by e^{2 phi}.
        #[arg(long)]
        phi: Option<String>,
        /// A JSON recipe, overriding KIND.
        #[arg(long)]
        spec: Option<String>,
        #[arg(long, default_value = "corpus")]
        dir: PathBuf,
        /// File name (default: `{kind}_{hash}.metric`).
        #[arg(long)]
        name: Option<String>,
    },
}

fn generator(kind: &str, dim: usize, radius: f64, mass: f64) -> Result<Option<GeneratorSpec>, String> {
    Ok(Some(match kind {
        "standard" => return Ok(None),
        "flat" => GeneratorSpec::Flat { dim },
        "sphere" => GeneratorSpec::sphere(dim, radius),
        "t11" => GeneratorSpec::T11,
        "s2xs2" => GeneratorSpec::s2xs2(),
        "warped_sinh" => GeneratorSpec::warped_sinh(),
        "schwarzschild_product" => GeneratorSpec::SchwarzschildProduct {
            mass,
            r_range: (2.5 * mass, 6.0 * mass),
        },
        other => return Err(format!("unknown generator kind `{other}`")),
    }))
}

fn command(cmd: Cmd) -> Result<Command, String> {
    Ok(match cmd {
        Cmd::Analyze { input } => Command::Analyze { input },
        Cmd::Classify { input } => Command::Classify { input },
        Cmd::Verify { input, phi } => Command::Verify { input, phi },
        Cmd::Sasaki { input } => Command::Sasaki { input },
        Cmd::Selftest => Command::Selftest,
        Cmd::Generate { kind, dim, radius, mass, phi, spec, dir, name } => {
            let mut spec = match spec {
                Some(json) => Some(serde_json::from_str(&json).map_err(|e| format!("--spec: {e}"))?),
                None => generator(&kind, dim, radius, mass)?,
            };
            if let Some(phi) = phi {
                let inner = spec.ok_or("--phi needs a single generator, not `standard`")?;
                spec = Some(GeneratorSpec::rescale(&phi, inner));
            }
            Command::Generate { spec, dir, name }
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd = match command(cli.command) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    let config = RunConfig {
        samples: cli.samples,
        seed: cli.seed,
        verify_samples: cli.verify_samples,
        tol_rank: cli.tol_rank,
        tol_field: cli.tol_field,
        step: cli.step,
        min_gap: cli.min_gap,
        per_sample: cli.per_sample,
        ..RunConfig::new(cmd)
    };
    let outcome = run(&config);
    for d in &outcome.diagnostics {
        eprintln!("{d}");
    }
    if let Some(report) = &outcome.report {
        match &cli.output {
            Some(path) => {
                if let Err(e) = std::fs::write(path, report) {
                    eprintln!("error: {}: {e}", path.display());
                    return ExitCode::from(EXIT_CONFIG as u8);
                }
            }
            None => print!("{report}"),
        }
    }
    ExitCode::from(outcome.exit_code as u8)
}
