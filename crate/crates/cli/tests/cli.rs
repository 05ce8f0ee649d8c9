use std::process::{Command, Output};

use mzi_core::engine::TransitionRecord;
use mzi_core::harness::{EnsembleStats, ModeComparison};

fn mzi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mzi")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn ensemble_for_the_paradox_setup() {
    let o = mzi(&["ensemble", "--scenario", "CE", "--theory", "ct", "--mode", "always-split", "--n", "2000", "--seed", "42", "--format", "json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stats = EnsembleStats::from_json(&stdout(&o)).unwrap();
    assert_eq!(stats.n_runs, 2000);
    assert_eq!(stats.cells[2].count + stats.cells[3].count, 0);
    assert!(stats.cells[0].count > 0 && stats.cells[1].count > 0);

    let text = mzi(&["ensemble", "--scenario", "CE", "--n", "100"]);
    assert!(stdout(&text).contains("chi-square"));
    let csv = mzi(&["ensemble", "--scenario", "ME", "--n", "100", "--format", "csv"]);
    assert!(stdout(&csv).contains("ensemble,source,detector,count,probability,expected"));
}

#[test]
fn compare_reports_the_divergence() {
    let o = mzi(&["compare", "--scenario", "CE", "--theory", "ct", "--n", "4000", "--seed", "42", "--format", "json"]);
    assert!(o.status.success());
    let cmp: ModeComparison = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(cmp.verdict, "modes diverge");
    for d in &cmp.deltas[2..] {
        assert!((d.analytic_delta - 0.25).abs() < 1e-12);
    }
}

#[test]
fn simulate_prints_a_record() {
    let o = mzi(&["simulate", "--scenario", "BE", "--start", "S1", "--format", "json"]);
    assert!(o.status.success());
    let r: TransitionRecord = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(r.detector, "D1");
    let o = mzi(&["simulate", "--scenario", "CE", "--theory", "st", "--mode", "collapse", "--detector", "D1"]);
    assert!(stdout(&o).contains("upper=true lower=false"), "{}", stdout(&o));
    let o = mzi(&["simulate", "--scenario", "ABE", "--theory", "at", "--start", "D2", "--format", "csv"]);
    assert!(stdout(&o).lines().nth(1).unwrap().starts_with("S2,D2,at"));
}

#[test]
fn oracle_passes_its_gate() {
    let o = mzi(&["oracle"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("L2="));
    // A grid too coarse for the carrier wave fails the check, not the run.
    let o = mzi(&["oracle", "--points", "4096", "--dx", "10"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn frames_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("f");
    let o = mzi(&["frames", "--theory", "st", "--resolution", "32", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 12);
    assert_eq!(std::fs::read_dir(&out).unwrap().count(), 12);
}

#[test]
fn exit_codes() {
    assert_eq!(mzi(&["--help"]).status.code(), Some(0));
    assert_eq!(mzi(&["ensemble", "--bogus"]).status.code(), Some(1));
    assert_eq!(mzi(&["ensemble", "--theory", "qt"]).status.code(), Some(1));
    assert_eq!(mzi(&[]).status.code(), Some(1));
    let o = mzi(&["ensemble", "--scenario", "nowhere.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere"));
    assert_eq!(mzi(&["simulate", "--start", "B1"]).status.code(), Some(2));
}

#[test]
fn scenario_files_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("custom.json");
    let mut s = mzi_core::scenario::builtin_scenario("ME").unwrap();
    s.name = "custom".into();
    std::fs::write(&path, s.to_json().unwrap()).unwrap();
    let o = mzi(&["ensemble", "--scenario", path.to_str().unwrap(), "--n", "50", "--format", "json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(EnsembleStats::from_json(&stdout(&o)).unwrap().scenario_name, "custom");
}
