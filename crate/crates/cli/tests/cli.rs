use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn run(dir: &Path, config: Option<&Path>, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_covkernel"));
    cmd.args(args).env("COVK_OUTPUT_DIR", dir).env_remove("COVK_SEED");
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn ok(dir: &Path, config: Option<&Path>, args: &[&str]) -> String {
    let out = run(dir, config, args, &[]);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn bell_pipeline_classifies_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    for stage in ["datagen", "align", "fit", "predict", "report"] {
        ok(&out, None, &[stage]);
    }
    let scores = read_json(&out.join("scores.json"));
    assert_eq!(scores["quantum"]["train_accuracy"], json!(1.0));
    assert_eq!(scores["quantum"]["test_accuracy"], json!(1.0));
    let manifest = read_json(&out.join("manifest_fit.json"));
    assert_eq!(manifest["task"], "fit");
    let files: Vec<&str> = manifest["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["file"].as_str().unwrap())
        .collect();
    assert!(files.contains(&"model_quantum.csv"));
    assert!(manifest["config"]["master_seed"].is_u64());
    let predictions = std::fs::read_to_string(out.join("predictions.csv")).unwrap();
    assert!(predictions.starts_with("index,label,quantum,classical\n"));
    let report = read_json(&out.join("report.json"));
    assert!(report["alignment"]["best_loss"].as_f64().unwrap() < 0.05);
}

#[test]
fn calibration_is_reproducible_from_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "cal.json",
        &json!({
            "master_seed": 3,
            "noise": {"p01": 0.02, "p10": 0.0},
            "calibration": {"ns": [4, 8, 12], "thresholds": [0.9], "samples": 4, "shots": {"sampled": 2000}}
        }),
    );
    let a = tmp.path().join("a");
    ok(&a, Some(&cfg), &["calibrate"]);
    let manifest = read_json(&a.join("manifest_calibrate.json"));
    let replay = write_config(tmp.path(), "replay.json", &manifest["config"]);
    let b = tmp.path().join("b");
    ok(&b, Some(&replay), &["calibrate"]);
    for file in ["calibration.csv", "recommendations.csv"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap());
    }
    let mut r = csv::Reader::from_path(a.join("recommendations.csv")).unwrap();
    let ds: Vec<usize> = r
        .records()
        .map(|rec| rec.unwrap()[2].parse().unwrap())
        .collect();
    assert_eq!(ds.len(), 3);
    assert!(ds.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn noiseless_calibration_recommends_zero() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), None, &["calibrate"]);
    let mut r = csv::Reader::from_path(tmp.path().join("recommendations.csv")).unwrap();
    let headers = r.headers().unwrap().clone();
    let col = headers.iter().position(|h| h == "recommended_d").unwrap();
    for rec in r.records() {
        assert_eq!(&rec.unwrap()[col], "0");
    }
}

#[test]
fn empty_test_set_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    for stage in ["datagen", "align", "fit"] {
        ok(out, None, &[stage]);
    }
    let header = std::fs::read_to_string(out.join("test.csv"))
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    std::fs::write(out.join("test.csv"), header + "\n").unwrap();
    let res = run(out, None, &["predict"], &[]);
    assert!(!res.status.success());
    assert!(!out.join("predictions.csv").exists());
}

#[test]
fn classical_only_needs_no_quantum_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        &json!({
            "dataset": {"source": "union_of_subspaces", "ambient_dim": 6, "dims": [2, 2], "samples_per_class": 20},
            "svc": {"classical": {"kernels": [{"kind": "rbf", "gamma": 1.0}], "cs": [1.0, 10.0], "folds": 3}}
        }),
    );
    let out = tmp.path().join("run");
    ok(&out, Some(&cfg), &["datagen"]);
    ok(&out, Some(&cfg), &["fit", "--classical-only"]);
    ok(&out, Some(&cfg), &["predict", "--classical-only"]);
    assert!(!out.join("fiducial.json").exists());
    assert!(!out.join("kernel_train.csv").exists());
    assert!(!out.join("model_quantum.csv").exists());
    let scores = read_json(&out.join("scores.json"));
    assert!(scores["quantum"].is_null());
    assert!(scores["classical"]["test_accuracy"].is_f64());
}

#[test]
fn predict_refuses_changed_kernel_spec() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    for stage in ["datagen", "align", "fit"] {
        ok(&out, None, &[stage]);
    }
    let noisy = write_config(tmp.path(), "noisy.json", &json!({"noise": {"p01": 0.05, "p10": 0.0}}));
    let res = run(&out, Some(&noisy), &["predict"], &[]);
    assert_eq!(res.status.code(), Some(5), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn missing_stage_and_bad_config_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let res = run(tmp.path(), None, &["align"], &[]);
    assert_eq!(res.status.code(), Some(4));
    let bad = write_config(tmp.path(), "bad.json", &json!({"seed": 1}));
    assert_eq!(run(tmp.path(), Some(&bad), &["datagen"], &[]).status.code(), Some(2));
    let res = run(tmp.path(), None, &["datagen"], &[("COVK_SEED", "abc")]);
    assert_eq!(res.status.code(), Some(2));
    let res = run(tmp.path(), None, &["report"], &[]);
    assert_eq!(res.status.code(), Some(4));
}

#[test]
fn seed_override_changes_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&a, None, &["datagen"]);
    let out = run(&b, None, &["datagen"], &[("COVK_SEED", "99")]);
    assert!(out.status.success());
    assert_ne!(
        std::fs::read(a.join("dataset.csv")).unwrap(),
        std::fs::read(b.join("dataset.csv")).unwrap()
    );
    let manifest = read_json(&b.join("manifest_datagen.json"));
    assert_eq!(manifest["config"]["master_seed"], json!(99));
}

fn failed_checks(dir: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(dir.join("verify_report.csv")).unwrap();
    r.records()
        .map(|rec| rec.unwrap())
        .filter(|rec| &rec[1] == "false")
        .map(|rec| rec[0].to_string())
        .collect()
}

#[test]
fn verify_passes_and_negative_control_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "v.json",
        &json!({"verify": {
            "sphere_dims": [2, 5],
            "sphere_trials": 50000,
            "subspace_dims": [1, 2],
            "subspace_trials": 20000,
            "inequality_trials": 50000
        }}),
    );
    let good = tmp.path().join("good");
    let stdout = ok(&good, Some(&cfg), &["verify"]);
    assert!(stdout.contains("sigma"));
    assert!(failed_checks(&good).is_empty());
    let bad = tmp.path().join("bad");
    ok(&bad, Some(&cfg), &["verify", "--negative-control"]);
    assert_eq!(failed_checks(&bad), vec!["closed_form_vs_statevector".to_string()]);
    let mut r = csv::Reader::from_path(good.join("verify_report.csv")).unwrap();
    let headers = r.headers().unwrap().clone();
    let sig = headers.iter().position(|h| h == "sigmas").unwrap();
    let statistical = r
        .records()
        .map(|rec| rec.unwrap())
        .filter(|rec| rec[0].starts_with("sphere_inner") || rec[0].starts_with("same_subspace"))
        .count();
    assert_eq!(statistical, 4);
    let mut r = csv::Reader::from_path(good.join("verify_report.csv")).unwrap();
    for rec in r.records().map(|rec| rec.unwrap()) {
        if rec[0].starts_with("sphere_inner") {
            assert!(!rec[sig].is_empty());
        }
    }
}
