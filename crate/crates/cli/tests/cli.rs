use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lps")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

const GVI: &str = r#"
seed = 7
method = "none"
prior = "gaussian"

[target]
name = "gaussian"
mean = [1.0, -1.0]
var = 0.5

[train]
steps = 40
batch = 64
eval_interval = 20

[train.eval]
batch = 256
"#;

const PHI4: &str = r#"
seed = 3
method = "none"

[target]
name = "phi4"
extent = 2

[train]
steps = 20
batch = 64
eval_interval = 10

[train.eval]
batch = 300
"#;

fn run_with(config: &str, dir: &Path) -> Output {
    let cfg = dir.join("experiment.toml");
    fs::write(&cfg, config).unwrap();
    let out = dir.join("run");
    lps(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn small_run_writes_metrics_and_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(GVI, dir.path());
    ok(&o);
    assert!(String::from_utf8_lossy(&o.stdout).contains("ELBO"));
    let run = dir.path().join("run");
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("step,elbo,log_z_hat"));
    assert_eq!(metrics.lines().count(), 3);
    let ckpt = lps_core::checkpoint::Checkpoint::load(run.join("checkpoint.json")).unwrap();
    assert_eq!(ckpt.model.dim(), 2);
    assert_eq!(ckpt.seed, 7);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 7);
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(&run_with(GVI, a.path()));
    ok(&run_with(GVI, b.path()));
    for f in ["metrics.csv", "samples.csv", "checkpoint.json"] {
        let x = fs::read(a.path().join("run").join(f)).unwrap();
        let y = fs::read(b.path().join("run").join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let o = lps(&["run", "--target", "banana", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = lps(&["run", "--target", "gmm", "--prior", "gaussian", "--K", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(lps(&["run", "--method", "nonsense", "--target", "gmm"]).status.code(), Some(2));
}

#[test]
fn eval_is_deterministic_and_respects_jensen() {
    let dir = tempfile::tempdir().unwrap();
    ok(&run_with(GVI, dir.path()));
    let ckpt = dir.path().join("run/checkpoint.json");
    let args = ["eval", "--checkpoint", ckpt.to_str().unwrap(), "--samples", "500", "--seed", "11"];
    let a = lps(&args);
    ok(&a);
    assert_eq!(a.stdout, lps(&args).stdout);
    let report: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert!(report["log_z_hat"].as_f64().unwrap() >= report["elbo"].as_f64().unwrap());
}

#[test]
fn eval_rejects_mismatched_target() {
    let dir = tempfile::tempdir().unwrap();
    ok(&run_with(GVI, dir.path()));
    let other = dir.path().join("funnel.toml");
    fs::write(&other, "[target]\nname = \"funnel\"\n").unwrap();
    let ckpt = dir.path().join("run/checkpoint.json");
    let o = lps(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--config", other.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn export_tables_match_the_run() {
    let dir = tempfile::tempdir().unwrap();
    ok(&run_with(PHI4, dir.path()));
    let run = dir.path().join("run");
    let plots = dir.path().join("plots");
    ok(&lps(&["export", "--run", run.to_str().unwrap(), "--out", plots.to_str().unwrap()]));
    let scatter = fs::read_to_string(plots.join("scatter.csv")).unwrap();
    assert_eq!(scatter.lines().count(), 301);
    assert!(scatter.starts_with("x0,x1,x2,x3"));
    let mut r = csv::Reader::from_path(plots.join("magnetization_histogram.csv")).unwrap();
    let mass: f64 = r.records().map(|rec| rec.unwrap()[2].parse::<f64>().unwrap()).sum();
    assert!((mass - 1.0).abs() < 1e-9);
    let elbo = fs::read_to_string(plots.join("elbo_curve.csv")).unwrap();
    assert_eq!(elbo.lines().count(), 3);
    let audit = fs::read_to_string(plots.join("refinement_audit.csv")).unwrap();
    assert_eq!(audit.lines().count(), 1);
}
