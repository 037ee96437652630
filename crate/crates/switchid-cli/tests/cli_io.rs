//! File-level checks of the command-line interface: emitted artifacts,
//! exit codes and format stability.

use std::path::Path;
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_switchid")
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary must run")
}

fn tmp(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("switchid-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn simulate_writes_series_and_truth() {
    let dir = tmp("sim");
    let out = run(&[
        "simulate",
        "--preset",
        "paper-random",
        "--snr",
        "inf",
        "--seed",
        "5",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let series = std::fs::read_to_string(dir.join("series.csv")).unwrap();
    assert!(series.starts_with("u,y\n"));
    assert_eq!(series.lines().count(), 1001);
    let truth: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["noise_sigma"], 0.0);
    assert_eq!(truth["segment_modes"].as_array().unwrap().len(), 15);
}

#[test]
fn simulate_accepts_custom_system_descriptions() {
    let dir = tmp("sim-custom");
    let truth_path = dir.join("system.json");
    std::fs::write(
        &truth_path,
        r#"{
  "thetas": [[0.5, 1.0], [-0.5, -1.0]],
  "switch_instants": [1, 51, 101],
  "segment_modes": [1, 2],
  "noise_sigma": 0.0,
  "seed": 0
}"#,
    )
    .unwrap();
    let out = run(&[
        "simulate",
        "--system",
        truth_path.to_str().unwrap(),
        "--order-na",
        "1",
        "--order-nb",
        "1",
        "--snr",
        "20",
        "--seed",
        "9",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let truth: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("truth.json")).unwrap()).unwrap();
    assert!(truth["noise_sigma"].as_f64().unwrap() > 0.0);
}

#[test]
fn identify_round_trips_through_csv_files() {
    let dir = tmp("identify");
    let sim = run(&[
        "simulate",
        "--preset",
        "paper-periodic",
        "--seed",
        "2",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(sim.status.success());
    let out = run(&[
        "identify",
        "--input",
        dir.join("series.csv").to_str().unwrap(),
        "--truth",
        dir.join("truth.json").to_str().unwrap(),
        "--order-na",
        "2",
        "--order-nb",
        "2",
        "--dwell",
        "10",
        "--mmax",
        "15",
        "--split",
        "800",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("S = 3"), "stdout: {stdout}");
    assert!(stdout.contains("instant deviations"));

    // Result JSON re-serializes byte-identically.
    let text = std::fs::read_to_string(dir.join("result.json")).unwrap();
    let value: switchid::pipeline::IdentificationResult = serde_json::from_str(&text).unwrap();
    let mut round = serde_json::to_string_pretty(&value).unwrap();
    round.push('\n');
    assert_eq!(text, round);

    // Prediction CSV covers every aligned sample exactly once.
    let pred = std::fs::read_to_string(dir.join("prediction.csv")).unwrap();
    assert_eq!(pred.lines().next().unwrap(), "k,y,yhat,label");
    assert_eq!(pred.lines().count(), 1 + 998);
}

#[test]
fn montecarlo_emits_tables_and_summary() {
    let dir = tmp("mc");
    let out = Command::new(bin())
        .args([
            "montecarlo",
            "--preset",
            "paper-periodic",
            "--runs",
            "3",
            "--extractor",
            "l1",
            "--seed",
            "11",
            "--out-dir",
            dir.to_str().unwrap(),
        ])
        .env("SWITCHID_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let runs = std::fs::read_to_string(dir.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 4);
    assert!(runs.lines().skip(1).all(|l| l.contains(",ok,")));
    let params = std::fs::read_to_string(dir.join("params.csv")).unwrap();
    assert_eq!(params.lines().count(), 1 + 12); // three submodels x four coords
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["runs"], 3);
    assert_eq!(summary["failures"], 0);
    assert!(summary["fit_test"]["mean"].as_f64().unwrap() > 90.0);
}

#[test]
fn single_replication_reports_zero_spread() {
    let dir = tmp("mc1");
    let out = run(&[
        "montecarlo",
        "--preset",
        "paper-periodic",
        "--runs",
        "1",
        "--seed",
        "4",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let params = std::fs::read_to_string(dir.join("params.csv")).unwrap();
    for line in params.lines().skip(1) {
        let std_col: f64 = line.split(',').nth(4).unwrap().parse().unwrap();
        assert_eq!(std_col, 0.0, "line {line}");
    }
}

#[test]
fn metrics_reports_certificates_and_optional_overlaps() {
    let dir = tmp("metrics");
    // A tiny series generated by y_k = 0.5 y_{k-1} + u_{k-1} keeps the
    // exhaustive certificates in range and fits the candidate exactly.
    let u = [0.4, -1.0, 0.3, 0.9, -0.2, 1.4, -0.8, 0.1, 0.6, -1.2];
    let mut y = [0.0f64; 10];
    for k in 1..10 {
        y[k] = 0.5 * y[k - 1] + u[k - 1];
    }
    let mut csv = String::from("u,y\n");
    for (a, b) in u.iter().zip(&y) {
        csv.push_str(&format!("{a},{b}\n"));
    }
    std::fs::write(dir.join("tiny.csv"), csv).unwrap();
    let out = run(&[
        "metrics",
        "--input",
        dir.join("tiny.csv").to_str().unwrap(),
        "--order-na",
        "1",
        "--order-nb",
        "1",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["sparsity"]["tau"].as_f64().is_some());
    assert!(metrics["sparsity"]["spark"].is_number());
    assert!(metrics["overlaps"].is_null());

    // Optional candidate file adds the overlap section.
    std::fs::write(
        dir.join("thetas.json"),
        r#"{"thetas": [[0.5, 1.0], [0.5, 1.0]]}"#,
    )
    .unwrap();
    let out = run(&[
        "metrics",
        "--input",
        dir.join("tiny.csv").to_str().unwrap(),
        "--order-na",
        "1",
        "--order-nb",
        "1",
        "--thetas",
        dir.join("thetas.json").to_str().unwrap(),
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap();
    let overlaps = metrics["overlaps"].as_array().unwrap();
    assert_eq!(overlaps.len(), 1);
    assert_eq!(overlaps[0]["fraction"], 1.0); // identical candidates
}

#[test]
fn segment_emits_selection_table() {
    let dir = tmp("segment");
    let sim = run(&[
        "simulate",
        "--preset",
        "paper-periodic",
        "--seed",
        "1",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(sim.status.success());
    let out = run(&[
        "segment",
        "--input",
        dir.join("series.csv").to_str().unwrap(),
        "--order-na",
        "2",
        "--order-nb",
        "2",
        "--mmax",
        "15",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("selected M = 10"), "stdout: {stdout}");
    let criterion = std::fs::read_to_string(dir.join("criterion.csv")).unwrap();
    assert_eq!(criterion.lines().next().unwrap(), "m,cost,criterion");
    assert_eq!(criterion.lines().count(), 16);
    assert!(Path::new(&dir.join("segmentation.json")).exists());
}

#[test]
fn bad_inputs_exit_nonzero() {
    let missing = run(&["identify", "--input", "/nonexistent/series.csv"]);
    assert!(!missing.status.success());
    let no_source = run(&["identify"]);
    assert!(!no_source.status.success());
    let bad_preset = run(&["simulate", "--preset", "nope"]);
    assert!(!bad_preset.status.success());
    let conflicting = run(&[
        "simulate",
        "--preset",
        "paper-random",
        "--system",
        "x.json",
    ]);
    assert!(!conflicting.status.success());
}
