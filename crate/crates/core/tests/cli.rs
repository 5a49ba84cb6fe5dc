//! End-to-end runs of the command-line tool.

use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_demediate");
const ROOT: &str = env!("CARGO_MANIFEST_DIR");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn config(name: &str) -> String {
    format!("{ROOT}/configs/{name}")
}

#[test]
fn help_lists_every_subcommand_and_exits_zero() {
    let o = run(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    for cmd in ["simulate", "analyze", "oracle", "calibrate", "dag-adjust", "report"] {
        assert!(stdout(&o).contains(cmd), "{cmd}");
    }
    let o = run(&["simulate", "--help"]);
    for flag in ["--out", "--seed", "--nsim", "--threads", "--bootstrap", "--full-scale"] {
        assert!(stdout(&o).contains(flag), "{flag}");
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["oracle"]).status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_two() {
    let o = run(&["oracle", "/nonexistent/config.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/config.toml"));
}

#[test]
fn simulate_null_scenario_writes_five_method_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["simulate", &config("null.toml"), "--nsim", "100", "--bootstrap", "0", "--no-jackknife", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let methods: Vec<&str> = summary.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["mmrm", "established", "mod1", "mod2", "mod3"]);
    assert!(stdout(&o).contains("established"));
    let trials = std::fs::read_to_string(dir.path().join("trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 1 + 100 * 5);
}

#[test]
fn missing_tau_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "schema_version = 1\n[scenario]\ne_dm = 0.5\n").unwrap();
    let o = run(&["simulate", cfg.to_str().unwrap(), "--nsim", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("scenario.tau"), "{}", stderr(&o));
}

#[test]
fn unknown_key_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "schema_version = 1\n[scenario]\ntau = 174.15\ne_mm = 0.5\n").unwrap();
    let o = run(&["oracle", cfg.to_str().unwrap(), "--n", "1000"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("e_mm") && stderr(&o).contains("line 4"), "{}", stderr(&o));
}

fn simulate_to(dir: &Path, seed: &str) -> Vec<u8> {
    let o = run(&[
        "simulate",
        &config("alternative.toml"),
        "--nsim",
        "4",
        "--bootstrap",
        "20",
        "--seed",
        seed,
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    std::fs::read(dir.join("trials.csv")).unwrap()
}

#[test]
fn same_seed_gives_identical_trials_file() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = simulate_to(a.path(), "42");
    assert_eq!(first, simulate_to(b.path(), "42"));
    assert_ne!(first, simulate_to(c.path(), "43"));
}

#[test]
fn report_reproduces_summary() {
    let dir = tempfile::tempdir().unwrap();
    simulate_to(dir.path(), "5");
    let again = dir.path().join("again.csv");
    let o = run(&[
        "report",
        dir.path().join("trials.csv").to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read_to_string(dir.path().join("summary.csv")).unwrap(),
        std::fs::read_to_string(again).unwrap()
    );
}

#[test]
fn dag_adjust_reproduces_the_table() {
    let file = format!("{ROOT}/tests/fixtures/alzheimer_dag.txt");
    let o = run(&["dag-adjust", &file]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "sym05,sym1,y1.5\n");
    let o = run(&["dag-adjust", &file, "--exposure", "sym05", "--outcome", "y1"]);
    assert_eq!(stdout(&o), "y05\n");
    let o = run(&["dag-adjust", &file, "--exposure", "nope", "--outcome", "y1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oracle_without_slowing_is_near_zero() {
    let o = run(&["oracle", &config("null.toml"), "--n", "200000", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let theta: f64 = text.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(theta.abs() < 0.2, "{text}");
}

#[test]
fn calibrate_hits_the_target() {
    let o = run(&["calibrate", &config("alternative.toml"), "--target-sd", "12", "--share", "0.7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let sd: f64 = text.split_whitespace().last().unwrap().parse().unwrap();
    assert!((sd - 12.0).abs() < 0.12, "{text}");
}

#[test]
fn shipped_configs_parse() {
    for entry in std::fs::read_dir(format!("{ROOT}/configs")).unwrap() {
        let path = entry.unwrap().path();
        demediate::config::Config::from_path(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}
