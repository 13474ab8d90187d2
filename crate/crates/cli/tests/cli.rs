use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn probe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_probe"))
        .args(args)
        .env_remove("PROBE_THREADS")
        .output()
        .expect("run probe")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small grid so the end-to-end runs stay quick.
fn simulate(dir: &Path, seed: &str) -> Output {
    probe(&["--seed", seed, "simulate", "--output-dir", s(dir), "--m", "64", "--m1", "4", "--n", "80"])
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn csv_column(p: &Path, k: usize) -> Vec<f64> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(k).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn simulate_is_deterministic() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    assert!(simulate(a.path(), "9").status.success());
    assert!(simulate(b.path(), "9").status.success());
    for f in ["data.csv", "truth.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let header = fs::read_to_string(a.path().join("data.csv")).unwrap().lines().next().unwrap().to_string();
    assert!(header.starts_with("y,x1,x2"));
    assert_eq!(header.split(',').count(), 65);
    let gamma = csv_column(&a.path().join("truth.csv"), 1);
    assert_eq!(gamma.iter().sum::<f64>(), 4.0);
}

#[test]
fn fit_predict_round_trip() {
    let dir = TempDir::new().unwrap();
    assert!(simulate(dir.path(), "3").status.success());
    let data = dir.path().join("data.csv");
    let out = dir.path().join("fit.json");
    let o = probe(&["--threads", "1", "fit", "--variant", "aao", "--input", s(&data), "--output", s(&out), "--max-iter", "5000"]);
    assert!(matches!(o.status.code(), Some(0) | Some(2)), "{}", stderr(&o));
    let doc = read_json(&out);
    for key in ["variant", "beta_bar", "p_map", "beta_map", "sigma2_map", "ig_a", "ig_b", "iterations", "converged", "trace_path"] {
        assert!(doc.get(key).is_some(), "missing {key}");
    }
    assert_eq!(doc["variant"], "aao");
    assert_eq!(doc["beta_bar"].as_array().unwrap().len(), 64);
    assert_eq!(o.status.code() == Some(0), doc["converged"].as_bool().unwrap());
    assert!(Path::new(doc["trace_path"].as_str().unwrap()).exists());

    let pred = dir.path().join("pred.csv");
    let o = probe(&["predict", "--fit", s(&out), "--input", s(&data), "--output", s(&pred)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let yhat = csv_column(&pred, 0);
    let y = csv_column(&data, 0);
    assert_eq!(yhat.len(), 80);

    // same numbers as the library call on the same file
    let text = fs::read_to_string(&data).unwrap();
    let rows: Vec<Vec<f64>> = text.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    let yv = ndarray::Array1::from_iter(rows.iter().map(|r| r[0]));
    let xv = ndarray::Array2::from_shape_fn((80, 64), |(i, j)| rows[i][j + 1]);
    let d = probe_core::prepare_dataset(yv.view(), xv.view()).unwrap();
    let cfg = probe_core::FitConfig { max_iter: 5000, ..probe_core::FitConfig::all_at_once() };
    let r = probe_core::fit(&d, &cfg).unwrap();
    let lib = probe_core::predict(&r, xv.view()).unwrap();
    assert_eq!(lib.to_vec(), yhat);
    let rmse = (y.iter().zip(&yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 80.0).sqrt();
    assert!(rmse.is_finite());
}

#[test]
fn iteration_cap_exits_two() {
    let dir = TempDir::new().unwrap();
    assert!(simulate(dir.path(), "4").status.success());
    let out = dir.path().join("r.json");
    let o = probe(&["fit", "--input", s(&dir.path().join("data.csv")), "--output", s(&out), "--max-iter", "1"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let doc = read_json(&out);
    assert_eq!(doc["converged"], false);
    assert_eq!(doc["iterations"], 1);
    let trace = fs::read_to_string(doc["trace_path"].as_str().unwrap()).unwrap();
    assert_eq!(trace.lines().count(), 2);
}

#[test]
fn missing_response_column_is_an_error() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("d.csv");
    fs::write(&data, "a,b\n1,2\n3,5\n4,4\n").unwrap();
    let o = probe(&["fit", "--input", s(&data), "--output", s(&dir.path().join("r.json"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("'y'"), "{}", stderr(&o));
}

#[test]
fn malformed_csv_is_an_error() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("d.csv");
    fs::write(&data, "y,x1\n1,2\n3,oops\n").unwrap();
    let o = probe(&["fit", "--input", s(&data), "--output", s(&dir.path().join("r.json"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn predict_rejects_wrong_width() {
    let dir = TempDir::new().unwrap();
    assert!(simulate(dir.path(), "5").status.success());
    let out = dir.path().join("r.json");
    probe(&["fit", "--input", s(&dir.path().join("data.csv")), "--output", s(&out), "--max-iter", "3"]);
    let narrow = dir.path().join("x.csv");
    fs::write(&narrow, "x1,x2\n1,2\n").unwrap();
    let o = probe(&["predict", "--fit", s(&out), "--input", s(&narrow), "--output", s(&dir.path().join("p.csv"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("64 predictors"), "{}", stderr(&o));
}

#[test]
fn cv_reports_every_fold() {
    let dir = TempDir::new().unwrap();
    assert!(simulate(dir.path(), "6").status.success());
    let out = dir.path().join("cv.json");
    let o = probe(&["cv", "--input", s(&dir.path().join("data.csv")), "--output", s(&out), "--folds", "10", "--method", "lasso"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc = read_json(&out);
    assert_eq!(doc["per_fold"].as_array().unwrap().len(), 10);
    assert!(doc["mspe"].as_f64().unwrap() > 0.0);
}

#[test]
fn bench_writes_report() {
    let dir = TempDir::new().unwrap();
    let o = probe(&[
        "--seed", "2", "bench", "--output-dir", s(dir.path()), "--m", "64", "--pi", "0.0625", "--n", "60",
        "--methods", "probe_aao,ridge", "--replicates", "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["bench_records.csv", "bench_cells.csv", "bench.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn unknown_method_and_bad_flags_exit_one() {
    let dir = TempDir::new().unwrap();
    let o = probe(&["cv", "--input", "nope.csv", "--output", s(&dir.path().join("c.json")), "--method", "forest"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown method"));
    assert_eq!(probe(&["fit", "--bogus"]).status.code(), Some(1));
    assert_eq!(probe(&["--help"]).status.code(), Some(0));
}
