//! End-to-end runs of the `asymrisk` binary: exit codes, artifacts and
//! reproducibility.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn asymrisk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asymrisk")).args(args).output().expect("binary runs")
}

fn models() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/models"))
}

fn model(name: &str) -> String {
    models().join(name).display().to_string()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn riccati_writes_artifacts_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = asymrisk(&["riccati", "--model", &model("scalar_lq.toml"), "--out", &out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc = read_json(&dir.path().join("result.json"));
    let p0 = doc["result"]["p0"][0][0].as_f64().unwrap();
    assert!((p0 - 2.0 / 3.0).abs() < 1e-8);
    assert_eq!(doc["provenance"]["command"], "riccati");
    assert_eq!(doc["provenance"]["grid"]["steps"], 1000);
    assert_eq!(doc["provenance"]["model"]["sha256"].as_str().unwrap().len(), 64);
    let csv = fs::read_to_string(dir.path().join("riccati.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# asymrisk-csv v1 riccati seed="));
    assert_eq!(lines.next(), Some("t,p_1_1"));
    assert_eq!(lines.count(), 1001);
}

#[test]
fn riccati_escape_exits_with_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = asymrisk(&["riccati", "--model", &model("escape_lq.toml"), "--out", &out]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let doc = read_json(&dir.path().join("result.json"));
    assert_eq!(doc["result"]["status"], "blowup");
    let t = doc["result"]["blowup_time"].as_f64().unwrap();
    assert!((t - 0.5).abs() < 0.05, "blow-up near t = 0.5, got {t}");
}

#[test]
fn malformed_model_reports_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let src = fs::read_to_string(models().join("scalar_lq.toml")).unwrap().replace("steps = 1000", "steps = \"many\"");
    fs::write(&path, src).unwrap();
    let o = asymrisk(&["lq", "--model", &path.display().to_string(), "--out", &dir.path().display().to_string()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("bad.toml") && err.contains("line"), "{err}");
}

#[test]
fn bad_usage_is_a_validation_failure() {
    assert_eq!(asymrisk(&["no-such-command"]).status.code(), Some(1));
    let o = asymrisk(&["lq-sim", "--theta", "0.5", "--gamma1", "0.1", "--model", &model("scalar_lq.toml")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--theta"));
}

#[test]
fn small_monte_carlo_is_inconclusive() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = asymrisk(&["lq-sim", "--model", &model("scalar_lq.toml"), "--paths", "10", "--steps", "100", "--out", &out]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let doc = read_json(&dir.path().join("result.json"));
    assert_eq!(doc["result"]["status"], "inconclusive");
    assert!(dir.path().join("paths.csv").exists());
}

#[test]
fn bsde_output_is_reproducible() {
    let run = |dir: &Path| {
        let out = dir.display().to_string();
        let o = asymrisk(&["bsde", "--payoff", "quadratic", "--gamma1", "0.1", "--gamma2", "0.0", "--steps", "64", "--out", &out]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        (fs::read(dir.join("result.json")).unwrap(), fs::read(dir.join("convergence.csv")).unwrap())
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(run(a.path()), run(b.path()));
    let doc = read_json(&a.path().join("result.json"));
    let exact = -(0.6f64).ln() / 0.4;
    assert!((doc["result"]["exact"].as_f64().unwrap() - exact).abs() < 1e-15);
}

#[test]
fn bsde_overflow_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = asymrisk(&[
        "bsde", "--payoff", "product", "--param", "k=50", "--gamma1", "1", "--gamma2", "1", "--steps", "400",
        "--out", &dir.path().display().to_string(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn portfolio_flat_market() {
    let dir = tempfile::tempdir().unwrap();
    let o = asymrisk(&["portfolio", "--model", &model("flat_market.toml"), "--out", &dir.path().display().to_string()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc = read_json(&dir.path().join("result.json"));
    let u = doc["result"]["u0"][0].as_f64().unwrap();
    let g = doc["result"]["optimal_growth"].as_f64().unwrap();
    assert!((u - 0.04 / 0.048).abs() < 1e-8);
    assert!((g - (0.02 + 0.5 * 0.04 * 0.04 / 0.048)).abs() < 1e-8);
    assert!(dir.path().join("coefficients.csv").exists());
}

#[test]
fn vardecomp_and_criterion_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = asymrisk(&["vardecomp", "--payoff", "product", "--steps", "50", "--out", &out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc = read_json(&dir.path().join("result.json"));
    assert_eq!(doc["result"]["axioms_passed"], true);
    let o = asymrisk(&["criterion", "--payoff", "quadratic", "--steps", "100", "--out", &out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("remainders.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 4);
}

#[test]
fn config_file_is_merged_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "payoff = \"linear\"\nsteps = 20\nseed = 9\n[params]\na = 2.0\n").unwrap();
    let out = dir.path().join("o").display().to_string();
    let o = asymrisk(&["taylor", "--config", &cfg.display().to_string(), "--steps", "40", "--out", &out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc = read_json(&dir.path().join("o/result.json"));
    assert_eq!(doc["provenance"]["seed"], 9);
    assert_eq!(doc["provenance"]["grid"]["steps"], 40);
    assert!((doc["result"]["d1"].as_f64().unwrap() - 4.0).abs() < 1e-12);

    fs::write(&cfg, "payof = \"linear\"\n").unwrap();
    let o = asymrisk(&["taylor", "--config", &cfg.display().to_string(), "--out", &out]);
    assert_eq!(o.status.code(), Some(1));
}
