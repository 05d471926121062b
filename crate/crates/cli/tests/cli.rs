use std::fs;
use std::path::Path;
use std::process::Command;

fn fedfuse(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fedfuse")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = fedfuse(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("cfg.json");
    let cfg = r#"{
        "folds": 2,
        "seeds": [1],
        "federation": {"rounds": 2, "batch_size": 8, "optimizer": {"kind": "adamw", "lr": 0.01}},
        "corpus": {"synthetic": {"n_per_class": 8}},
        "grid": {"lr": [0.01, 0.001]}
    }"#;
    fs::write(&path, cfg).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn gradcheck_passes() {
    let out = ok(&["gradcheck", "--instances", "2"]);
    assert_eq!(out.lines().count(), 2);
}

#[test]
fn data_pipeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p).to_str().unwrap().to_string();
    let cfg = write_config(dir.path());
    ok(&["gen-data", "--config", &cfg, "--out", &d("corpus")]);
    assert!(dir.path().join("corpus/manifest.json").exists());
    ok(&["align", "--corpus", &d("corpus"), "--out", &d("aligned.json")]);
    let aligned: serde_json::Value = serde_json::from_slice(&fs::read(d("aligned.json")).unwrap()).unwrap();
    assert_eq!(aligned.as_array().unwrap().len(), 16);
    ok(&["augment", "--corpus", &d("corpus"), "--out", &d("aug"), "--seed", "2"]);
    let m: serde_json::Value = serde_json::from_slice(&fs::read(d("aug/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["samples"].as_array().unwrap().len(), 32);
}

#[test]
fn run_and_report_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p).to_str().unwrap().to_string();
    let cfg = write_config(dir.path());
    ok(&["run", "--config", &cfg, "--out", &d("a"), "--workers", "1"]);
    ok(&["run", "--config", &cfg, "--out", &d("b"), "--workers", "3"]);
    let a = fs::read(d("a/report.json")).unwrap();
    assert_eq!(a, fs::read(d("b/report.json")).unwrap());
    let table = ok(&["report", "--input", &d("a/report.json"), "--out", &d("c")]);
    assert!(table.contains("FedAvg"));
    assert!(dir.path().join("c/report.csv").exists());
}

#[test]
fn seed_and_profile_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p).to_str().unwrap().to_string();
    let cfg = write_config(dir.path());
    ok(&["run", "--config", &cfg, "--out", &d("a"), "--seed", "9", "--profile", "run"]);
    let r: serde_json::Value = serde_json::from_slice(&fs::read(d("a/report.json")).unwrap()).unwrap();
    assert_eq!(r[0]["seeds"], serde_json::json!([9]));
}

#[test]
fn grid_writes_best_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p).to_str().unwrap().to_string();
    let cfg = write_config(dir.path());
    let out = ok(&["grid", "--config", &cfg, "--out", &d("g")]);
    assert!(out.contains("best:"));
    let g: serde_json::Value = serde_json::from_slice(&fs::read(d("g/grid.json")).unwrap()).unwrap();
    assert_eq!(g["rows"].as_array().unwrap().len(), 2);
    assert!(dir.path().join("g/best_config.json").exists());
}

#[test]
fn bad_input_fails_cleanly() {
    let out = fedfuse(&["run", "--config", "/nonexistent.json"]);
    assert!(!out.status.success());
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"folds": 1}"#).unwrap();
    assert!(!fedfuse(&["run", "--config", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]).status.success());
}
