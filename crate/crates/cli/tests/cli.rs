//! The binary end to end: exit codes, report shape, determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn corpus(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(name)
}

fn weylscope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_weylscope")).args(args).output().expect("binary runs")
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is a JSON report")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn rescaled_t11_is_conformally_einstein() {
    let out = weylscope(&["classify", path(&corpus("t11_rescaled.metric")), "--samples", "12", "--verify-samples", "4"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out);
    assert_eq!(r["verdict"], "ConformallyEinstein");
    assert_eq!(r["transversal_class"], "non_integrable");
    assert_eq!(r["rank_histogram"]["1"], 12);
    assert!(r["residuals"]["einstein"].as_f64().unwrap() <= 1e-4);
    assert_eq!(r["details"]["route"], "rank1");
    assert_eq!(r["input_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn warped_example_is_inconclusive() {
    let out = weylscope(&["classify", path(&corpus("warped_sinh.metric")), "--samples", "50"]);
    assert_eq!(out.status.code(), Some(1));
    let r = report(&out);
    assert_eq!(r["verdict"], "Inconclusive_NegativeScaling");
    assert_eq!(r["transversal_class"], "integrable");
}

#[test]
fn parse_errors_exit_2_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("broken.metric");
    std::fs::write(&file, "coords x y z\ng = [[1, 0, 0],\n [1, 0],\n [1 + ]]\n").unwrap();
    let out = weylscope(&["classify", path(&file)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("4:"), "{err}");

    let out = weylscope(&["classify", path(&corpus("s2xs2.metric")), "--tol-rank", "-1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = weylscope(&["verify", path(&corpus("s2xs2.metric")), "--phi", "0.1*x1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = weylscope(&["classify", "/nonexistent/file.metric"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn mostly_exceptional_samples_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("half.metric");
    // Positive definite only for x1 > -0.2.
    std::fs::write(&file, "coords x1 x2 x3 x4\ng = [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,x1 + 0.2]]\n").unwrap();
    let out = weylscope(&["analyze", path(&file), "--samples", "20"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!report(&out)["exceptional_points"].as_array().unwrap().is_empty());
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let input = corpus("s2xs2_rescaled.metric");
    let args = ["classify", path(&input), "--samples", "10", "--per-sample"];
    let a = weylscope(&args);
    let b = weylscope(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert!(report(&a)["per_sample"].as_array().is_some_and(|s| !s.is_empty()));
    let other_seed = weylscope(&["classify", path(&input), "--samples", "10", "--seed", "7"]);
    assert_ne!(a.stdout, other_seed.stdout);
}

#[test]
fn output_flag_writes_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("out.json");
    let out = weylscope(&["analyze", path(&corpus("sphere4.metric")), "--samples", "4", "-o", path(&file)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&file).unwrap()).unwrap();
    assert_eq!(r["command"], "analyze");
    assert_eq!(r["rank_histogram"]["4"], 4);
    assert!(r.get("per_sample").is_none());
}

#[test]
fn verify_and_sasaki_commands() {
    let out = weylscope(&["verify", path(&corpus("t11.metric")), "--phi", "0.1*th1 + 0.05*cos(ph2)", "--verify-samples", "5"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["verdict"], "Consistent");
    assert!(r["details"]["mean_curvature_transform"]["residual"].as_f64().unwrap() <= 1e-4);

    let out = weylscope(&["sasaki", path(&corpus("t11.metric")), "--verify-samples", "5"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(report(&out)["verdict"], "ConformallyEinsteinSasaki");

    let out = weylscope(&["sasaki", path(&corpus("warped_sinh.metric")), "--verify-samples", "5"]);
    assert_eq!(out.status.code(), Some(1));

    let out = weylscope(&["sasaki", path(&corpus("s2xs2.metric"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn generate_reproduces_the_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let out = weylscope(&["generate", "standard", "--dir", path(dir.path())]);
    assert_eq!(out.status.code(), Some(0));
    for entry in std::fs::read_dir(corpus("")).unwrap() {
        let p = entry.unwrap().path();
        let name = p.file_name().unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(dir.path().join(name)).unwrap(), "{name:?}");
    }

    let out = weylscope(&["generate", "sphere", "--dim", "3", "--radius", "2", "--phi", "0.1*th1", "--dir", path(dir.path())]);
    assert_eq!(out.status.code(), Some(0));
    let written = report(&out)["details"]["written"][0]["path"].as_str().unwrap().to_string();
    assert!(written.contains("conformal_rescale_"));
    assert!(std::fs::read_to_string(written).unwrap().contains("exp(2*(0.1*th1))"));

    let out = weylscope(&["generate", "--spec", r#"{"kind":"flat","dim":3}"#, "--name", "f3.metric", "--dir", path(dir.path())]);
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("f3.metric").exists());

    assert_eq!(weylscope(&["generate", "nonsense"]).status.code(), Some(2));
}

#[test]
fn selftest_passes() {
    let out = weylscope(&["selftest"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["verdict"], "Pass");
    assert!(r["details"]["suites"].as_array().unwrap().len() >= 8);
}

#[test]
fn library_entry_point_matches_binary() {
    use weylscope_cli::{run, Command as Cmd, RunConfig};
    let mut cfg = RunConfig::new(Cmd::Analyze {
        input: corpus("flat4.metric"),
    });
    cfg.samples = 3;
    let lib = run(&cfg);
    let bin = weylscope(&["analyze", path(&corpus("flat4.metric")), "--samples", "3"]);
    assert_eq!(lib.exit_code, 0);
    assert_eq!(lib.report.unwrap().as_bytes(), bin.stdout.as_slice());
}
