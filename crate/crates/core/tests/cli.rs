use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const JUMP_MARKET: &str = r#"{
  "market": {
    "b": 0.05, "sigma": 0.2, "marks": [1.0], "intensities": [1.0], "beta": [0.2],
    "alpha": 1.0, "horizon": 1.0,
    "claim": {"type": "put", "strike": 1.0},
    "constraint": {"type": "interval", "lo": 0.0, "hi": 1.0}
  },
  "grid": {"steps": 4, "paths": 2000, "seed": 11},
  "oracle": {"depth": 2, "actions": 21},
  "value": {"x": [0.0, 1.0]}
}"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jumpbsde"))
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn bad_beta_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &JUMP_MARKET.replace(r#""beta": [0.2]"#, r#""beta": [-1.0]"#),
    );
    let out = run("simulate", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "config");
    assert!(
        err["message"].as_str().unwrap().contains("beta > -1"),
        "{err}"
    );
}

#[test]
fn unknown_field_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &JUMP_MARKET.replace(r#""seed": 11"#, r#""seed": 11, "sed": 1"#),
    );
    let out = run("simulate", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(
        "solve",
        &tmp.path().join("nope.json"),
        &tmp.path().join("out"),
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solve_rejects_half_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &JUMP_MARKET.replace(
            r#"{"type": "interval", "lo": 0.0, "hi": 1.0}"#,
            r#"{"type": "half_line", "lo": 0.0}"#,
        ),
    );
    let out = run("solve", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(
        err["message"].as_str().unwrap().contains("not compact"),
        "{err}"
    );
}

#[test]
fn locked_output_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), JUMP_MARKET);
    let out_dir = tmp.path().join("out");
    fs::create_dir_all(&out_dir).unwrap();
    fs::write(out_dir.join(".jumpbsde.lock"), "").unwrap();
    let out = run("simulate", &cfg, &out_dir, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out_dir.join(".jumpbsde.lock").exists());
    assert!(!out_dir.join("summary.json").exists());
}

#[test]
fn simulate_writes_outputs_and_releases_lock() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), JUMP_MARKET);
    let out_dir = tmp.path().join("out");
    let out = run("simulate", &cfg, &out_dir, &[]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(!out_dir.join(".jumpbsde.lock").exists());
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["command"], "simulate");
    assert_eq!(summary["seed"], 11);
    assert!(summary["config"]["output"].is_null());
    let series = fs::read_to_string(out_dir.join("series.csv")).unwrap();
    assert_eq!(series.lines().count(), 1 + 5);
    assert!(fs::read_to_string(out_dir.join("report.txt"))
        .unwrap()
        .contains("verdict"));
}

#[test]
fn overrides_reach_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), JUMP_MARKET);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run("simulate", &cfg, &a, &["--seed", "12", "--steps", "6"]);
    run("simulate", &cfg, &b, &[]);
    let sa: Value =
        serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(sa["seed"], 12);
    assert_eq!(sa["config"]["grid"]["steps"], 6);
    assert_ne!(
        fs::read(a.join("series.csv")).unwrap(),
        fs::read(b.join("series.csv")).unwrap()
    );
}

#[test]
fn solve_series_has_one_row_per_node() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), JUMP_MARKET);
    let out_dir = tmp.path().join("out");
    let out = run("solve", &cfg, &out_dir, &[]);
    assert_ne!(out.status.code(), Some(2));
    let series = fs::read_to_string(out_dir.join("series.csv")).unwrap();
    let mut lines = series.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,mean_y,min_y,max_y,mean_abs_z,mean_norm_u,pi_mean,pi_min,pi_max"
    );
    assert_eq!(lines.count(), 5);
}

#[test]
fn value_writes_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), JUMP_MARKET);
    let out_dir = tmp.path().join("out");
    let out = run("value", &cfg, &out_dir, &[]);
    assert_ne!(out.status.code(), Some(2));
    let v = fs::read_to_string(out_dir.join("value.csv")).unwrap();
    assert_eq!(v.lines().count(), 1 + 2);
}

#[test]
fn oracle_runs_on_small_tree() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), JUMP_MARKET);
    let out_dir = tmp.path().join("out");
    let out = run("oracle", &cfg, &out_dir, &[]);
    assert_ne!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["command"], "oracle");
}
