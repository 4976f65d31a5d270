use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn fairflow(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fairflow"));
    cmd.args(args).env_remove("FAIRFLOW_CACHE");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn error_json(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().rev().find(|l| l.starts_with('{')).expect("JSON error line");
    serde_json::from_str(line).unwrap()
}

fn train_tiny(out: &Path, extra: &[&str]) -> Value {
    let mut args = vec!["train", "--steps", "4096", "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    ok_json(&fairflow(&args, &[]))
}

#[test]
fn lambda_with_base_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = fairflow(&["train", "--strategy", "base", "--lambda", "2", "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("Usage"), "{stderr}");
    let err = error_json(&out);
    assert_eq!(err["status"], "error");
    assert_eq!(err["command"], "train");
}

#[test]
fn loss_coef_outside_strategy_c_rejected() {
    let out = fairflow(&["train", "--strategy", "base", "--loss-coef", "8000"], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_gives_error_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = fairflow(
        &["eval", "--scenario", "duel", "--ego", "/nonexistent/a.json", "--bg", "cubic", "--out", dir.path().to_str().unwrap()],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    let err = error_json(&out);
    assert_eq!(err["command"], "eval");
    assert!(err["error"].as_str().unwrap().contains("a.json"));
}

#[test]
fn train_writes_checkpoint_curve_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let s = train_tiny(dir.path(), &["--strategy", "c", "--loss-coef", "8000", "--seed", "5"]);
    assert_eq!(s["steps_trained"], 4096);
    let ck: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("c-loss-8000.json")).unwrap()).unwrap();
    assert_eq!(ck["metadata"]["loss_coef"], 8000.0);
    assert_eq!(ck["metadata"]["seed"], 5);
    let curve = std::fs::read_to_string(dir.path().join("c-loss-8000.curve.csv")).unwrap();
    assert!(curve.starts_with("step,mean_episode_reward\n"));
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config"]["train"]["strategy"], "c");
    assert!(manifest["command"].as_array().unwrap().iter().any(|a| a == "train"));
}

#[test]
fn single_flow_cubic_eval() {
    let dir = tempfile::tempdir().unwrap();
    let s = ok_json(&fairflow(&["eval", "--scenario", "single", "--ego", "cubic", "--out", dir.path().to_str().unwrap()], &[]));
    let u = s["utilization"].as_f64().unwrap();
    assert!((0.5..=0.8).contains(&u), "{u}");
    let csv = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(csv.starts_with("time_s,tput_mbps,capacity_mbps\n"));
    assert!(dir.path().join("trace.json").exists());
}

#[test]
fn augmented_checkpoint_evaluates_with_wider_observation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    train_tiny(dir.path(), &["--strategy", "base"]);
    let base = format!("{d}/base.json");
    train_tiny(dir.path(), &["--strategy", "b", "--baseline", &base]);
    let b = format!("{d}/b.json");
    let ev = format!("{d}/eval");
    let s = ok_json(&fairflow(&["eval", "--scenario", "duel", "--ego", &b, "--bg", &base, "--episodes", "3", "--out", &ev], &[]));
    let j = s["mean_j"].as_f64().unwrap();
    assert!((0.5..=1.0).contains(&j));
    let csv = std::fs::read_to_string(format!("{ev}/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("episode,J,flow_0_mbps,flow_1_mbps,harm\n"));

    let dy = format!("{d}/dyn");
    let s = ok_json(&fairflow(&["eval", "--scenario", "dynamic", "--ego", &b, "--out", &dy], &[]));
    let phases = s["phase_j"].as_array().unwrap();
    assert_eq!(phases.len(), 5);
    assert_eq!(phases[0], 1.0);

    let rep = format!("{d}/rep");
    ok_json(&fairflow(&["report", "--scenario", "duel", "--ego", &b, "--bg", &base, "--out", &rep], &[]));
    let series = std::fs::read_to_string(format!("{rep}/duel_series.csv")).unwrap();
    assert!(series.starts_with("mi,flow_1_mbps,flow_2_mbps\n"));
    assert_eq!(series.lines().count(), 401);
}

#[test]
fn mixed_cubic_reports_harm() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    train_tiny(dir.path(), &["--strategy", "base"]);
    let s = ok_json(&fairflow(
        &["eval", "--scenario", "cubic", "--ego", &format!("{d}/base.json"), "--episodes", "2", "--out", &format!("{d}/mix")],
        &[],
    ));
    assert!(s["harm_mean"].as_f64().unwrap() >= 0.0);
    assert!(s["cubic_solo_mbps"].as_f64().unwrap() > 0.0);
}

#[test]
fn sweep_reuses_cache_and_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let cfg = dir.path().join("sweep.toml");
    std::fs::write(&cfg, "steps = 4096\nepisodes = 2\nstrategy = \"c\"\n").unwrap();
    let cache = dir.path().join("cache");
    let run = |out: &str| {
        ok_json(&fairflow(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out], &[("FAIRFLOW_CACHE", &cache)]))
    };
    let first = run(&format!("{d}/one"));
    assert_eq!(first["rows"], 3);
    assert_eq!(first["failed_rows"], 0);
    let csv1 = std::fs::read(format!("{d}/one/sweep.csv")).unwrap();
    let cached = std::fs::read_dir(&cache).unwrap().count();
    run(&format!("{d}/two"));
    let csv2 = std::fs::read(format!("{d}/two/sweep.csv")).unwrap();
    assert_eq!(csv1, csv2);
    assert_eq!(std::fs::read_dir(&cache).unwrap().count(), cached);
    let text = String::from_utf8(csv1).unwrap();
    assert!(text.starts_with("strategy,config,mean_J,std_J,ego_mbps,bg_mbps,aggregate_mbps,status,flag\n"));
    assert!(text.contains("c,loss=8000,"));
}

#[test]
fn config_file_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "sead = 1\n").unwrap();
    let out = fairflow(&["train", "--strategy", "base", "--config", cfg.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_json(&out)["error"].as_str().unwrap().contains("sead"));
}
