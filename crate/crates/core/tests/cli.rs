//! End-to-end runs of the `vfc` binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn vfc(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vfc"))
        .args(args)
        .env("VFC_OUT", out)
        .env("RUST_LOG", "error")
        .output()
        .expect("vfc runs")
}

/// A 5 s fig2 run with limits loose enough to pass.
fn short_config(dir: &Path, extra: Value) -> String {
    let mut cfg = serde_json::json!({
        "preset": "fig2",
        "name": "short",
        "integrator": {"t_end": 5.0},
        "outputs": {"csv": "short.csv", "plot": "short.svg"},
        "thresholds": {"sync_err": 10.0, "param_err": 10.0, "theta_settle": 10.0, "drift": 10.0},
    });
    json_merge(&mut cfg, extra);
    let path = dir.join("short.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path.to_string_lossy().into_owned()
}

fn json_merge(base: &mut Value, patch: Value) {
    if let (Some(b), Value::Object(p)) = (base.as_object_mut(), patch) {
        for (k, v) in p {
            match b.get_mut(&k) {
                Some(slot) if slot.is_object() && v.is_object() => json_merge(slot, v),
                _ => {
                    b.insert(k, v);
                }
            }
        }
    }
}

#[test]
fn simulate_writes_csv_plot_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), Value::Null);
    let out = vfc(&["simulate", &cfg], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let csv = std::fs::read_to_string(dir.path().join("short.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    assert_eq!(header[0], "t");
    for col in [
        "x_0_0",
        "theta_2_1",
        "chi_o_0",
        "vartheta_o_1",
        "norm_xi",
        "s_0",
        "sync_err",
    ] {
        assert!(header.contains(&col), "missing column {col}");
    }
    // 5 s recorded every 0.1 s, plus the header.
    assert_eq!(csv.lines().count(), 52);

    let svg = std::fs::read_to_string(dir.path().join("short.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.contains("<svg"));

    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("short.report.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], Value::Bool(true));
}

#[test]
fn simulate_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let cfg = short_config(dir.path(), serde_json::json!({"initial": {"x": "random"}, "seed": 7}));
        assert!(vfc(&["simulate", &cfg], dir.path()).status.success());
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("short.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn failing_thresholds_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), serde_json::json!({"thresholds": {"sync_err": 1e-300}}));
    let out = vfc(&["simulate", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn stiff_step_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), serde_json::json!({"integrator": {"dt": 0.5}}));
    let out = vfc(&["simulate", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    assert!(!dir.path().join("short.csv").exists());
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), serde_json::json!({"gains": {"kk": 3.0}}));
    assert_eq!(vfc(&["simulate", &cfg], dir.path()).status.code(), Some(2));
}

#[test]
fn analyze_prints_report_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = vfc(&["analyze", "fig2"], dir.path());
    // No finite k* exists for this instance, so the verdict is a failure.
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["pe", "contraction", "decay", "p_bounds", "proof_constants", "checks"] {
        assert!(!report[key].is_null(), "missing {key}");
    }
    assert!(report["decay"]["kappa1"].as_f64().unwrap() > 0.0);
    assert!(dir.path().join("fig2.analysis.json").exists());
}
