use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn glsim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glsim"))
        .args(args)
        .current_dir(dir)
        .env_remove("GLSIM_WORKERS")
        .output()
        .unwrap()
}

fn manifest(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn rows(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(glsim(d, &["--help"]).status.code(), Some(0));
    assert_eq!(glsim(d, &["no-such-experiment"]).status.code(), Some(64));
    assert_eq!(glsim(d, &["simulate"]).status.code(), Some(64), "missing --out");
    assert_eq!(glsim(d, &["simulate", "--out", "r.jsonl", "--colour", "red"]).status.code(), Some(64));

    let bad = glsim(d, &["simulate", "--beta", "1.2", "--out", "r.jsonl"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("beta"));
    assert_eq!(glsim(d, &["simulate", "--dt=-1", "--out", "r.jsonl"]).status.code(), Some(2));
    assert_eq!(glsim(d, &["simulate", "--K", "many", "--out", "r.jsonl"]).status.code(), Some(64));

    let unwritable = glsim(d, &["riccati-verify", "--out", "missing/dir/r.jsonl"]);
    assert_eq!(unwritable.status.code(), Some(74));
}

#[test]
fn simulate_writes_report_trajectory_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = glsim(d, &["simulate", "--K", "8", "--T", "0.1", "--record-stride", "10", "--out", "s.jsonl"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = rows(&d.join("s.jsonl"));
    assert_eq!(r.len(), 1);
    assert_eq!(r[0]["experiment"], "simulate");
    assert_eq!(r[0]["K"], 8);
    let csv = fs::read_to_string(d.join("s.jsonl.trajectory.csv")).unwrap();
    assert!(csv.starts_with("time,normH,normHdelta,normY,normZV"));
    assert_eq!(csv.lines().count(), 1 + 11);
    let m = manifest(&d.join("s.jsonl.manifest.json"));
    assert_eq!(m["experiment"], "simulate");
    assert_eq!(m["status"], "ok");
}

#[test]
fn settings_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.conf"), "# test\nK = 4\nT = 0.05\nalpha = 1.7\nworkers = 1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_glsim"))
        .args(["simulate", "--config", "run.conf", "--alpha", "1.9", "--out", "p.jsonl"])
        .current_dir(d)
        .env("GLSIM_WORKERS", "2")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&d.join("p.jsonl.manifest.json"));
    assert_eq!(m["config"]["K"], "4");
    assert_eq!(m["sources"]["K"], "file");
    assert_eq!(m["config"]["alpha"], "1.9");
    assert_eq!(m["sources"]["alpha"], "cli");
    assert_eq!(m["config"]["workers"], "2");
    assert_eq!(m["sources"]["workers"], "env");
    assert_eq!(m["sources"]["dt"], "default");

    let out = Command::new(env!("CARGO_BIN_EXE_glsim"))
        .args(["simulate", "--config", "run.conf", "--workers", "3", "--out", "q.jsonl"])
        .current_dir(d)
        .env("GLSIM_WORKERS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
    let m = manifest(&d.join("q.jsonl.manifest.json"));
    assert_eq!(m["config"]["workers"], "3");
    assert_eq!(m["sources"]["workers"], "cli");

    fs::write(d.join("bad.conf"), "nonsense = 1\n").unwrap();
    assert_eq!(glsim(d, &["simulate", "--config", "bad.conf", "--out", "x.jsonl"]).status.code(), Some(64));
}

#[test]
fn reports_do_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let common = ["--K", "8", "--n-traj", "6", "--hitting-horizon", "4", "--x0-norm", "5", "--M-grid", "0.5,1,2", "--seed", "9"];
    for (w, name) in [("1", "a.jsonl"), ("4", "b.jsonl")] {
        let mut args = vec!["recurrence"];
        args.extend(common);
        args.extend(["--workers", w, "--out", name]);
        assert!(glsim(d, &args).status.success());
    }
    assert_eq!(fs::read(d.join("a.jsonl")).unwrap(), fs::read(d.join("b.jsonl")).unwrap());
    assert_eq!(
        fs::read(d.join("a.jsonl.survival.M0p5.csv")).unwrap(),
        fs::read(d.join("b.jsonl.survival.M0p5.csv")).unwrap()
    );
    let r = rows(&d.join("a.jsonl"));
    assert_eq!(r.len(), 3);
    for row in &r {
        assert_eq!(row["seed"], 9);
        assert_eq!(row["x0_norm"], 5.0);
        assert!(row["estimate"].as_f64().unwrap() >= 1f64.exp());
    }
}

#[test]
fn estimation_failure_still_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = glsim(
        d,
        &["recurrence", "--K", "8", "--n-traj", "4", "--hitting-horizon", "2", "--M-grid", "1e-9", "--out", "c.jsonl"],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("censored"));
    assert!(d.join("c.jsonl").exists());
    assert!(d.join("c.jsonl.manifest.json").exists());
    assert_ne!(manifest(&d.join("c.jsonl.manifest.json"))["status"], "ok");
}

#[test]
fn floats_round_trip_through_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(glsim(d, &["riccati-verify", "--out", "r.jsonl"]).status.success());
    let text = fs::read_to_string(d.join("r.jsonl")).unwrap();
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        for (_, x) in v.as_object().unwrap() {
            if let Some(f) = x.as_f64() {
                assert!(f.is_finite());
            }
        }
    }
    let again = tempfile::tempdir().unwrap();
    assert!(glsim(again.path(), &["riccati-verify", "--out", "r.jsonl"]).status.success());
    assert_eq!(text, fs::read_to_string(again.path().join("r.jsonl")).unwrap());
}
