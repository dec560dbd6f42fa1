use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spectral-clt"))
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p
}

fn without_timing(path: &Path) -> Value {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("timing");
    v
}

#[test]
fn simulate_writes_report_and_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"seed": 4, "replicas": 2, "model": {"kind": "Wishart", "n_particles": 5, "params": {"c": 2.0}},
            "numerics": {"horizon": 0.2, "dt": 0.01}}"#,
    );
    let out = dir.path().join("run");
    let status = bin().args(["simulate", "--config"]).arg(&cfg).arg("--out").arg(&out).args(["--threads", "2"]).status().unwrap();
    assert!(status.success());
    let text = fs::read_to_string(out.join("report.json")).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["pass"], Value::Bool(true));
    assert_eq!(v["config"]["experiment"], "simulate");
    // Top-level keys come out sorted.
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
    let pos = |k: &str| text.find(&format!("\n  \"{k}\"")).unwrap();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    assert!(pos("checks") < pos("config") && pos("config") < pos("timing"));
    let traj = fs::read_to_string(out.join("trajectories/replica_00001.csv")).unwrap();
    assert!(traj.starts_with("t,x1,x2,x3,x4,x5\n"));
}

#[test]
fn reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"experiment": "clt", "seed": 8, "replicas": 30, "model": {"kind": "OrnsteinUhlenbeck", "n_particles": 10},
            "numerics": {"horizon": 0.5, "dt": 0.002, "degrees": [1, 2]}, "clt": {"synth_draws": 500, "synth_intervals": 10}}"#,
    );
    let mut reports = Vec::new();
    for (i, threads) in ["1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        bin().args(["clt", "--config"]).arg(&cfg).arg("--out").arg(&out).args(["--threads", threads]).status().unwrap();
        reports.push(without_timing(&out.join("report.json")));
        assert!(out.join("fluctuations.csv").exists());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"model": {"kind": "Dyson", "n_particles": 3}}"#);
    let out = bin().args(["moments", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`seed`"));

    let cfg = write_config(dir.path(), r#"{"seed": 1, "model": {"kind": "Dyson", "n_particles": 0}}"#);
    let out = bin().args(["moments", "--config"]).arg(&cfg).output().unwrap();
    assert!(String::from_utf8_lossy(&out.stderr).contains("`model.n_particles`"));

    let cfg = write_config(dir.path(), r#"{"seed": 1, "model": {"kind": "Dyson", "n_particles": 3}}"#);
    let out = bin().args(["moments", "--threads", "0", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failed_checks_exit_with_one() {
    // Reversed drifts: the "low" system sits above the "high" one.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"seed": 2, "replicas": 3, "model": {"kind": "DysonDrifted", "n_particles": 4, "params": {"c": 1.0}},
            "init": {"kind": "ensemble"}, "numerics": {"horizon": 0.2, "dt": 0.01},
            "compare": {"high_params": {"c": -1.0}, "refine_dt": 0.005}}"#,
    );
    let out = dir.path().join("cmp");
    let status = bin().args(["compare", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(1));
    let v: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(v["pass"], Value::Bool(false));
}

#[test]
fn moments_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"seed": 1, "model": {"kind": "Wishart", "n_particles": 10, "params": {"c": 2.0}}, "numerics": {"degrees": [3]}}"#,
    );
    let out = dir.path().join("m");
    assert!(bin().args(["moments", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap().success());
    let csv = fs::read_to_string(out.join("moments.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,m0,m1,m2,m3"));
    let last: Vec<f64> = csv.lines().last().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert!((last[0] - 1.0).abs() < 1e-12 && (last[4] - 22.0).abs() < 1e-6);
}
