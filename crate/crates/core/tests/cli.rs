use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn mtfs(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtfs"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = mtfs(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

const DATA: [&str; 4] = ["--data", "s/synth.csv", "--schema", "s/schema.json"];

fn pipeline(dir: &Path) {
    ok(dir, &["synth", "--n", "200", "--m", "20", "--k-shared", "5", "--seed", "4", "--out", "s"]);
    ok(dir, &[&["path", "--theta", "0.1", "--out", "p"][..], &DATA].concat());
    ok(dir, &[&["select", "--theta", "0.1", "--ratio", "0.2", "--out", "sel"][..], &DATA].concat());
    let cv = ["cv", "--theta", "0.1", "--svr-epsilon", "0.1", "--seed", "4", "--selected", "sel/selected.json", "--out", "cv"];
    ok(dir, &[&cv[..], &DATA].concat());
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["s", "p", "sel", "cv"] {
        let mut names: Vec<_> = fs::read_dir(dir.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for p in names {
            out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
        }
    }
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn pipeline_is_reproducible_and_consistent() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    let fa = files(a.path());
    assert_eq!(fa.len(), 14);
    assert_eq!(fa, files(b.path()));

    let path = fs::read_to_string(a.path().join("p/path.csv")).unwrap();
    let last = path.lines().last().unwrap();
    assert_eq!(last.split(',').nth(7), Some("0"), "{last}");

    let truth = json(&a.path().join("s/ground_truth.json"));
    assert_eq!(truth["support"].as_array().unwrap().len(), 5);

    let selected = json(&a.path().join("sel/selected.json"));
    let chosen: Vec<&str> = selected["selected"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(!chosen.is_empty());
    let report = json(&a.path().join("cv/cv_report.json"));
    for fold in report["fold_details"].as_array().unwrap() {
        for key in ["reg_features", "cls_features"] {
            for f in fold[key].as_array().unwrap() {
                assert!(chosen.contains(&f.as_str().unwrap()), "{f} not selected");
            }
        }
    }
}

#[test]
fn predict_on_mean_row_returns_the_bias() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--n", "120", "--m", "8", "--k-shared", "3", "--seed", "2", "--out", "s"]);
    ok(d, &[&["cv", "--theta", "0.1", "--k", "3", "--svr-epsilon", "0.1", "--out", "cv"][..], &DATA].concat());

    let svr = json(&d.join("cv/svr_model.json"));
    let names: Vec<&str> = svr["feature_names"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    let means: Vec<String> = svr["standardization"]["means"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap().to_string()).collect();
    let svm = json(&d.join("cv/svm_model.json"));
    let svm_names: Vec<&str> = svm["feature_names"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    let svm_means: Vec<f64> = svm["standardization"]["means"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();

    // One row: every regression feature at its mean, classifier-only columns at theirs.
    let mut header: Vec<String> = names.iter().map(|s| s.to_string()).collect();
    let mut row = means.clone();
    for (n, m) in svm_names.iter().zip(&svm_means) {
        if !names.contains(n) {
            header.push(n.to_string());
            row.push(m.to_string());
        }
    }
    fs::write(d.join("mean.csv"), format!("{}\n{}\n", header.join(","), row.join(","))).unwrap();
    ok(d, &["predict", "--data", "mean.csv", "--models", "cv", "--out", "pred"]);

    let text = fs::read_to_string(d.join("pred/predictions.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].ends_with(",predicted_rul,predicted_failure_type"));
    let cells: Vec<&str> = lines[1].split(',').collect();
    let rul: f64 = cells[cells.len() - 2].parse().unwrap();
    assert!((rul - svr["bias"].as_f64().unwrap()).abs() < 1e-9, "{rul} vs {}", svr["bias"]);
    let expected = u8::from(svm["bias"].as_f64().unwrap() >= 0.0).to_string();
    assert_eq!(cells[cells.len() - 1], expected);
}

#[test]
fn invalid_synth_spec_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = mtfs(dir.path(), &["synth", "--k-shared", "60", "--m", "50", "--out", "s"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1);
    assert!(stderr.starts_with("error kind=validation reason="), "{stderr}");
}

#[test]
fn missing_data_file_is_an_io_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = mtfs(dir.path(), &["path", "--data", "nope.csv", "--schema", "nope.json", "--out", "p"]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error kind="));
}

#[test]
fn resolved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--n", "150", "--m", "10", "--k-shared", "3", "--seed", "7", "--out", "s"]);
    ok(d, &[&["fit", "--theta", "0.5", "--ratio", "0.3", "--tol", "1e-7", "--out", "f1"][..], &DATA].concat());

    // Same run driven only by the snapshot, redirected to a new directory.
    let mut cfg = json(&d.join("f1/resolved_config.json"));
    cfg["out"] = Value::from("f2");
    fs::write(d.join("cfg.json"), cfg.to_string()).unwrap();
    ok(d, &["fit", "--config", "cfg.json"]);
    for name in ["model.json", "trace.csv"] {
        assert_eq!(fs::read(d.join("f1").join(name)).unwrap(), fs::read(d.join("f2").join(name)).unwrap(), "{name}");
    }

    let mut snapshot = json(&d.join("f2/resolved_config.json"));
    snapshot["out"] = Value::from("f1");
    assert_eq!(snapshot, json(&d.join("f1/resolved_config.json")));
    let model = json(&d.join("f1/model.json"));
    assert_eq!(model["hyperparams"]["theta"], Value::from(0.5));
}

#[test]
fn cif_writes_one_file_per_stratum() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--n", "100", "--m", "4", "--k-shared", "2", "--out", "s"]);
    ok(d, &[&["cif", "--group-by", "car_kind", "--out", "c"][..], &DATA].concat());
    let names: Vec<String> = fs::read_dir(d.join("c")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).filter(|n| n.starts_with("cif_")).collect();
    assert!(names.len() >= 2, "{names:?}");
    for n in names {
        let text = fs::read_to_string(d.join("c").join(n)).unwrap();
        assert!(text.starts_with("time,cif_N,cif_T,survival,n_at_risk\n"));
    }
}
