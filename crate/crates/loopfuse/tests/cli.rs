//! End-to-end tests of the `loopfuse` binary: pipeline happy path,
//! validation failures with machine-readable error records, and report
//! determinism.

use std::path::Path;
use std::process::{Command, Output};

fn loopfuse(out_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loopfuse"))
        .arg("--out")
        .arg(out_dir)
        .args(args)
        .output()
        .expect("binary should run")
}

fn write_small_config(dir: &Path) -> std::path::PathBuf {
    // Small flower keeps the test fast while still producing loop closures.
    let path = dir.join("config.toml");
    std::fs::write(
        &path,
        r#"
[simulator]
dt = 0.1
speed = 1.0
feature = [5.0, 5.0]
pass_radius = 0.5

[simulator.pattern]
kind = "flower"
center = [5.0, 5.0]
radius = 2.0
passes = 4

[evaluation]
trials = 2
seed = 5
"#,
    )
    .unwrap();
    path
}

#[test]
fn pipeline_happy_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let config = write_small_config(out);
    let config_arg = config.to_str().unwrap();

    for stage in ["simulate", "retrieve", "smooth", "evaluate"] {
        let result = loopfuse(out, &[stage, "--config", config_arg]);
        assert!(
            result.status.success(),
            "{stage} failed: {}",
            String::from_utf8_lossy(&result.stderr)
        );
    }
    for artifact in [
        "dataset.csv",
        "retrieved.csv",
        "solution.csv",
        "eval_report.txt",
        "eval_series.csv",
    ] {
        assert!(out.join(artifact).exists(), "{artifact} missing");
    }
    let report = std::fs::read_to_string(out.join("eval_report.txt")).unwrap();
    assert!(report.contains("final relative error"));

    let result = loopfuse(out, &["plot-data", "--svg", "--config", config_arg]);
    assert!(result.status.success());
    assert!(out.join("plot_trajectory.csv").exists());
    assert!(out.join("plot_single_lc.csv").exists());
    assert!(out.join("trajectory.svg").exists());

    // The consider-mode retrieval runs through the same pipeline.
    let result = loopfuse(out, &["retrieve", "--consider", "--config", config_arg]);
    assert!(
        result.status.success(),
        "consider retrieve failed: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    let retrieved = std::fs::read_to_string(out.join("retrieved.csv")).unwrap();
    assert!(retrieved.contains("consider=1"));
    let result = loopfuse(out, &["smooth", "--config", config_arg]);
    assert!(result.status.success());
}

#[test]
fn retrieve_rejects_non_spd_covariance_row_with_its_index() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let config = write_small_config(out);
    let config_arg = config.to_str().unwrap();
    assert!(loopfuse(out, &["simulate", "--config", config_arg])
        .status
        .success());

    // Corrupt one covariance triangle in place.
    let dataset_path = out.join("dataset.csv");
    let text = std::fs::read_to_string(&dataset_path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let header = lines
        .iter()
        .position(|l| l.starts_with("[trajectory]"))
        .unwrap();
    let victim = header + 3;
    let mut fields: Vec<String> = lines[victim].split(',').map(String::from).collect();
    fields[4] = "-1".into();
    fields[6] = "-1".into();
    lines[victim] = fields.join(",");
    std::fs::write(&dataset_path, lines.join("\n")).unwrap();

    let result = loopfuse(out, &["retrieve", "--config", config_arg]);
    assert!(!result.status.success());
    let stderr = String::from_utf8_lossy(&result.stderr);
    let record: serde_json::Value =
        serde_json::from_str(stderr.lines().last().unwrap()).expect("stderr is a JSON record");
    assert_eq!(record["error"]["kind"], "parse");
    let message = record["error"]["message"].as_str().unwrap();
    assert!(
        message.contains(&format!("line {}", victim + 1)),
        "error message should name the offending line: {message}"
    );
}

#[test]
fn missing_stage_input_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let result = loopfuse(out, &["smooth"]);
    assert!(!result.status.success());
    let stderr = String::from_utf8_lossy(&result.stderr);
    let record: serde_json::Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(record["error"]["kind"], "missing-input");
}

#[test]
fn mct_reports_are_byte_identical_for_a_fixed_seed() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let config = write_small_config(dir_a.path());
    let config_arg = config.to_str().unwrap();

    for out in [dir_a.path(), dir_b.path()] {
        let result = loopfuse(
            out,
            &["mct", "--config", config_arg, "--trials", "2", "--seed", "5"],
        );
        assert!(
            result.status.success(),
            "mct failed: {}",
            String::from_utf8_lossy(&result.stderr)
        );
    }
    let series_a = std::fs::read(dir_a.path().join("mct_series.csv")).unwrap();
    let series_b = std::fs::read(dir_b.path().join("mct_series.csv")).unwrap();
    assert_eq!(series_a, series_b);
    let report_a = std::fs::read(dir_a.path().join("mct_report.txt")).unwrap();
    let report_b = std::fs::read(dir_b.path().join("mct_report.txt")).unwrap();
    assert_eq!(report_a, report_b);
}
