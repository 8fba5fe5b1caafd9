use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fastband::mixture::{mixture_catalog, sample_mixture};
use fastband::study::RunReport;
use serde_json::Value;
use tempfile::TempDir;

fn fastband(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fastband")).args(args).output().unwrap()
}

fn write_sample(dir: &Path, model: &str, n: usize, seed: u64) -> PathBuf {
    let s = sample_mixture(&mixture_catalog(model).unwrap(), n, seed).unwrap();
    let mut text = String::from("x,y\n");
    for row in s.rows() {
        text.push_str(&format!("{},{}\n", row[0], row[1]));
    }
    let path = dir.join(format!("{model}-{n}-{seed}.csv"));
    fs::write(&path, text).unwrap();
    path
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn matrix(v: &Value) -> Vec<Vec<f64>> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|row| row.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect())
        .collect()
}

#[test]
fn select_reports_a_positive_definite_bandwidth() {
    let dir = TempDir::new().unwrap();
    let data = write_sample(dir.path(), "correlated", 150, 4);
    let out = fastband(&["select", data.to_str().unwrap(), "--header", "--grid", "60"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out);
    assert_eq!(r["command"], "select");
    assert!(r["error"].is_null());
    assert_eq!(r["results"]["n_used"], 150);
    assert_eq!(r["config"]["mode"], "fft-L");
    let h = matrix(&r["results"]["h"]);
    assert_eq!(h[0][1], h[1][0]);
    assert!(h[0][0] > 0.0 && h[0][0] * h[1][1] - h[0][1] * h[0][1] > 0.0);
    // correlated target, so the selected matrix tilts the same way
    assert!(h[0][1] > 0.0);
}

#[test]
fn diagonal_constraint_gives_exact_zero_off_diagonal() {
    let dir = TempDir::new().unwrap();
    let data = write_sample(dir.path(), "correlated", 120, 9);
    let out = fastband(&[
        "select",
        data.to_str().unwrap(),
        "--header",
        "--constraint",
        "diagonal",
        "--mode",
        "direct-exact",
    ]);
    assert!(out.status.success());
    let h = matrix(&report(&out)["results"]["h"]);
    assert_eq!(h[0][1], 0.0);
    assert_eq!(h[1][0], 0.0);
}

#[test]
fn bad_input_exits_with_code_2_and_a_failure_report() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "1,2\n3,oops\n").unwrap();
    for args in [
        vec!["select", bad.to_str().unwrap()],
        vec!["select", "/no/such/file.csv"],
        vec!["select", bad.to_str().unwrap(), "--mode", "no-such-mode"],
    ] {
        let out = fastband(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let r = report(&out);
        assert!(r["error"].as_str().is_some_and(|e| !e.is_empty()));
        assert!(r["results"].is_null());
    }
}

#[test]
fn too_few_points_is_rejected() {
    let dir = TempDir::new().unwrap();
    let data = write_sample(dir.path(), "standard", 5, 1);
    let out = fastband(&["select", data.to_str().unwrap(), "--header"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(report(&out)["error"].as_str().unwrap().contains('5'));
}

#[test]
fn density_writes_one_row_per_grid_node() {
    let dir = TempDir::new().unwrap();
    let data = write_sample(dir.path(), "standard", 100, 2);
    let out = fastband(&[
        "density",
        data.to_str().unwrap(),
        "--header",
        "--h",
        "0.2,0.05;0.05,0.3",
        "--points",
        "30,40",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x1,x2,density");
    assert_eq!(lines.len(), 30 * 40 + 1);
    for line in &lines[1..] {
        let v: Vec<f64> = line.split(',').map(|t| t.parse().unwrap()).collect();
        assert_eq!(v.len(), 3);
        assert!(v[2] >= 0.0);
    }
}

#[test]
fn density_rejects_an_indefinite_bandwidth() {
    let dir = TempDir::new().unwrap();
    let data = write_sample(dir.path(), "standard", 50, 2);
    let out = fastband(&["density", data.to_str().unwrap(), "--header", "--h", "1,2;2,1"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn ise_study_is_deterministic_for_a_seed() {
    let args = ["--seed", "11", "ise-study", "--n", "60", "--grid", "20", "--reps", "3"];
    let a = report(&fastband(&args));
    let b = report(&fastband(&args));
    let cells = a["results"].as_array().unwrap();
    assert_eq!(cells.len(), 1);
    assert_eq!(cells[0]["ise"].as_array().unwrap().len(), 3);
    for key in ["ise", "failures", "evaluations", "median"] {
        assert_eq!(a["results"][0][key], b["results"][0][key], "{key}");
    }
    assert_eq!(a["environment"]["seed"], 11);
    let other = report(&fastband(&["--seed", "12", "ise-study", "--n", "60", "--grid", "20", "--reps", "3"]));
    assert_ne!(a["results"][0]["ise"], other["results"][0]["ise"]);
}

#[test]
fn output_file_round_trips_through_the_report_type() {
    let dir = TempDir::new().unwrap();
    let data = write_sample(dir.path(), "trimodal", 100, 6);
    let path = dir.path().join("report.json");
    let out = fastband(&["select", data.to_str().unwrap(), "--header", "-o", path.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let text = fs::read_to_string(&path).unwrap();
    let parsed = RunReport::from_json(&text).unwrap();
    assert_eq!(parsed.command, "select");
    assert_eq!(RunReport::from_json(&parsed.to_json()).unwrap().to_json(), parsed.to_json());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = TempDir::new().unwrap();
    let data = write_sample(dir.path(), "standard", 80, 3);
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"mode": "fft-M", "grid_sizes": [40], "constraint": "diagonal"}"#).unwrap();
    let out = fastband(&[
        "select",
        data.to_str().unwrap(),
        "--header",
        "--config",
        cfg.to_str().unwrap(),
        "--grid",
        "30",
    ]);
    assert!(out.status.success());
    let r = report(&out);
    assert_eq!(r["config"]["mode"], "fft-M");
    assert_eq!(r["config"]["constraint"], "diagonal");
    assert_eq!(r["results"]["grid"]["sizes"], serde_json::json!([30, 30]));
}

#[test]
fn bench_and_qr_bench_produce_cells() {
    let out = fastband(&["bench", "--n", "200", "--grid", "30", "--reps", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(report(&out)["results"].as_array().unwrap().len(), 3);
    let out = fastband(&["qr-bench", "--n", "200", "--r", "0,2", "--grid", "40", "--reps", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cells = report(&out)["results"].as_array().unwrap().clone();
    assert_eq!(cells.len(), 2);
    assert!(cells[0]["rel_diff"].as_f64().unwrap() < 0.02);
    assert!(cells[1]["fft_value"].as_f64().unwrap().is_finite());
}
