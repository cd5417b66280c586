mod common;

use std::fs;
use std::process::Command;

use common::scenarios_dir;

fn pamdi() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pamdi"))
}

fn scenario(name: &str) -> String {
    scenarios_dir().join(format!("{name}.toml")).display().to_string()
}

#[test]
fn validate_accepts_shipped_scenario() {
    let out = pamdi().args(["validate", &scenario("pipeline_two_workers")]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("ok"));
}

#[test]
fn validate_lists_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    let text = fs::read_to_string(scenarios_dir().join("pipeline_two_workers.toml"))
        .unwrap()
        .replace("priority = 1.0", "priority = -1.0")
        .replace("host = \"A\"", "host = \"Z\"");
    fs::write(&bad, text).unwrap();
    let out = pamdi().args(["validate", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().count() >= 2, "{stdout}");
}

#[test]
fn run_writes_trace_metrics_and_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = pamdi()
        .args(["run", &scenario("pipeline_two_workers"), "--seed", "3", "--algorithm", "ar-mdi", "--output-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stem = dir.path().join("pipeline_two_workers-ar-mdi-seed3");
    let trace = fs::read_to_string(stem.with_extension("trace")).unwrap();
    assert!(trace.lines().any(|l| l.contains(" result stream d=200")));
    let metrics = fs::read_to_string(stem.with_extension("metrics")).unwrap();
    assert!(metrics.contains("results=200/200"));
    let csv = fs::read_to_string(stem.with_extension("csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("pipeline_two_workers,ar-mdi,default,3,false"));
}

#[test]
fn truncated_run_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = pamdi()
        .args(["run", &scenario("pipeline_two_workers"), "--max-sim-time", "5", "--output-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn missing_file_exits_1() {
    let out = pamdi().args(["run", "/nonexistent/scenario.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_has_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = pamdi()
        .args(["sweep", &scenario("pipeline_two_workers"), "--seeds", "1..5", "--output-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("pipeline_two_workers-sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 20);

    let out = pamdi()
        .args([
            "sweep",
            &scenario("five_node_small_ts"),
            "--algorithms",
            "pa-mdi",
            "--seeds",
            "7",
            "--partitions",
            "2-2,4-2,2-4",
            "--sequential",
            "--output-dir",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let labels: Vec<&str> = stdout.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(labels, ["2-2", "4-2", "2-4"]);
}

#[test]
fn oracle_prints_one_block_per_beta() {
    let out = pamdi()
        .args(["oracle", &scenario("pipeline_two_workers"), "--data-points", "2", "--beta", "0.1,1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("beta ")).count(), 2);
    // 1 source x 2 data points x 2 partitions
    assert_eq!(stdout.lines().filter(|l| l.contains(" -> ")).count(), 2 * 4);
}
