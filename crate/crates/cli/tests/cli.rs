use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn skew_response(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skew-response"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn invalid_configuration_exits_2() {
    let out = skew_response(&["stability", "--set", "spectral.N=100"]);
    assert_eq!(out.status.code(), Some(2));
    let out = skew_response(&["stability", "--set", "fiber.nope=1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = skew_response(&["stability", "--config", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(2));
    let out = skew_response(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn regularity_writes_csv_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = skew_response(&["regularity", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("regularity.csv")).unwrap();
    assert!(csv.starts_with("omega,fd_error,tail_difference,mass\n"));
    assert_eq!(csv.lines().count(), 6);
    let r = report(dir.path());
    assert_eq!(r["flags"]["omega_regularity"]["pass"], true);
    assert_eq!(r["flags"]["omega_regularity"]["criterion"], 8);
    assert!(dir.path().join("timings.json").exists());
}

#[test]
fn config_file_seed_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"fiber": {"a": 0.3, "b": 0.0, "c": 0.3, "eps_max": 0.1}, "base": {"alpha0": 0.1, "beta": 0.0}}"#).unwrap();
    let out_dir = dir.path().join("run");
    let out = skew_response(&[
        "stability",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "7",
        "--set",
        "grids.omega_samples=[0.5]",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    // unperturbed family: the stability curve is identically zero
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let r = report(&out_dir);
    assert_eq!(r["config"]["moments"]["rng_seed"], 7);
    assert_eq!(r["config"]["base"]["alpha0"], 0.1);
    assert_eq!(r["config"]["grids"]["omega_samples"], serde_json::json!([0.5]));
}

#[test]
fn failing_flag_exits_3_and_is_named() {
    let dir = tempfile::tempdir().unwrap();
    // a single large-ε grid point at ω = 0.2 is outside the linear regime
    let out = skew_response(&[
        "stability",
        "--set",
        "grids.omega_samples=[0.2]",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("statistical_stability"));
}
