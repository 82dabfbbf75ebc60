use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_smallnoise");

const SIS: &str = r#"schema = "smallnoise-config-v1"

[model]
kind = "sis"
beta = 0.5
alpha = 0.2
rho_minus = 0.1
rho_plus = 0.15
population = 1e4
x0 = [0.1, 0.05]

[forgetting]
epsilon = 1e-2
initial_error_magnitudes = [1.0]
n_paths = 30
t_grid = [0.0, 1.0, 2.0]
"#;

const LINEAR: &str = r#"schema = "smallnoise-config-v1"
seed = 11

[model]
kind = "linear"
a = [[-1.0]]
h = [[1.0]]
s = [[1.0]]
g = [[0.5]]
l = [[1.0]]

[simulate]
epsilon = 1e-2
dt = 1e-3
t_end = 1.0
oracle_paths = 3

[convergence]
eps_grid = [1e-1, 1e-2, 1e-3]
n_paths = 60
t_checkpoints = [1.0]
dt = 1e-2
"#;

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, config).unwrap();
    Command::new(BIN)
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--output-dir")
        .arg(dir.join("out"))
        .env_remove("SMALLNOISE_SEED")
        .output()
        .unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_is_deterministic_for_a_seed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let out = run(d.path(), SIS, &["simulate", "--seed", "7"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("out/trajectory.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    let report = json(&a.path().join("out/simulate.json"));
    assert_eq!(report["config"]["seed"], 7);
}

#[test]
fn seed_falls_back_to_environment() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.toml");
    std::fs::write(&cfg, SIS).unwrap();
    let out = Command::new(BIN)
        .args(["simulate", "--t-end", "0.1", "--config"])
        .arg(&cfg)
        .arg("--output-dir")
        .arg(d.path())
        .env("SMALLNOISE_SEED", "123")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(json(&d.path().join("simulate.json"))["config"]["seed"], 123);
}

#[test]
fn convergence_report_has_rate_and_interval() {
    let d = tempfile::tempdir().unwrap();
    let out = run(d.path(), LINEAR, &["convergence", "--threads", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&d.path().join("out/convergence.json"));
    let fit = &report["result"]["fits"][0];
    let alpha = fit["alpha_hat"].as_f64().unwrap();
    assert!((alpha - 0.5).abs() < 0.1, "alpha {alpha}");
    assert_eq!(fit["alpha_ci"].as_array().unwrap().len(), 2);
    assert_eq!(report["config"]["convergence"]["n_paths"], 60);
    let csv = std::fs::read_to_string(d.path().join("out/convergence_paths.csv")).unwrap();
    assert!(csv.starts_with("epsilon,path,seed,t,err_norm\r\n"));
}

#[test]
fn check_assumptions_passes_at_default_sis_parameters() {
    let d = tempfile::tempdir().unwrap();
    let out = run(d.path(), SIS, &["check-assumptions"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&d.path().join("out/assumptions.json"));
    let v = &report["result"]["verdicts"];
    for key in ["a2_bounded", "a3_almost_linear", "a4_strongly_injective", "a4_elliptic", "a4_q0_eig_ratio"] {
        assert_eq!(v[key], true, "{key}");
    }
    assert!(report["result"]["almost_linear_mu"]["companion"].is_object());
    assert!(report["result"]["filter_stability"].is_object());
}

#[test]
fn filter_and_oracle_outputs() {
    let d = tempfile::tempdir().unwrap();
    assert!(run(d.path(), LINEAR, &["filter"]).status.success());
    let csv = std::fs::read_to_string(d.path().join("out/filter.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1002);
    assert!(run(d.path(), LINEAR, &["oracle-compare"]).status.success());
    let report = json(&d.path().join("out/oracle.json"));
    assert_eq!(report["result"]["paths"].as_array().unwrap().len(), 3);
    assert!(report["result"]["worst_mean_rms"].as_f64().unwrap() < 1e-2);
}

#[test]
fn help_exits_zero_on_every_subcommand() {
    for sub in ["simulate", "filter", "convergence", "forgetting", "check-assumptions", "oracle-compare"] {
        let out = Command::new(BIN).args([sub, "--help"]).output().unwrap();
        assert!(out.status.success(), "{sub}");
    }
    assert!(Command::new(BIN).arg("--help").output().unwrap().status.success());
}

#[test]
fn invalid_flag_exits_one_with_usage() {
    let out = Command::new(BIN).args(["simulate", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_config_key_exits_one_and_names_it() {
    let d = tempfile::tempdir().unwrap();
    let bad = format!("{LINEAR}\n[assumptions]\nwidth = 3\n");
    let out = run(d.path(), &bad, &["simulate"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("width") && err.contains("line"), "{err}");
    assert!(!d.path().join("out/trajectory.csv").exists());
}

#[test]
fn missing_section_and_non_linear_oracle_are_validation_errors() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(d.path(), SIS, &["convergence"]).status.code(), Some(1));
    assert_eq!(run(d.path(), SIS, &["oracle-compare"]).status.code(), Some(1));
}

#[test]
fn numerical_failure_exits_two_with_diagnostic_report() {
    // The SI±S linearization at the default parameters is not exponentially stable.
    let d = tempfile::tempdir().unwrap();
    let out = run(d.path(), SIS, &["forgetting"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&d.path().join("out/forgetting.json"));
    assert_eq!(report["error"]["kind"], "not_exponentially_stable");
    assert!(report["config"].is_object());
}

#[test]
fn unwritable_output_dir_is_an_error() {
    let d = tempfile::tempdir().unwrap();
    let file = d.path().join("not-a-dir");
    std::fs::write(&file, "x").unwrap();
    let cfg = d.path().join("run.toml");
    std::fs::write(&cfg, LINEAR).unwrap();
    let out = Command::new(BIN)
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--output-dir")
        .arg(&file)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
