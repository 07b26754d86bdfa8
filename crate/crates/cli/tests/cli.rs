use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn battle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_battle")).args(args).output().expect("binary runs")
}

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name).to_string_lossy().into_owned()
}

fn out_dir(t: &tempfile::TempDir, name: &str) -> PathBuf {
    t.path().join(name)
}

#[test]
fn run_writes_reports_and_exits_zero() {
    let t = tempfile::tempdir().unwrap();
    let d = out_dir(&t, "a");
    let o = battle(&["run", &scenario("three_of_eight.toml"), "--out-dir", d.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("violations 0"), "{stdout}");
    for f in ["report.json", "trace.jsonl", "summary.txt"] {
        assert!(d.join(f).exists(), "{f} missing");
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 7);
    assert_eq!(report["n"], 8);
}

#[test]
fn same_seed_same_bytes() {
    let t = tempfile::tempdir().unwrap();
    let (a, b, c) = (out_dir(&t, "a"), out_dir(&t, "b"), out_dir(&t, "c"));
    let s = scenario("three_of_eight.toml");
    for d in [&a, &b] {
        assert_eq!(battle(&["run", &s, "--out-dir", d.to_str().unwrap()]).status.code(), Some(0));
    }
    assert_eq!(battle(&["run", &s, "--seed", "99", "--out-dir", c.to_str().unwrap()]).status.code(), Some(0));
    let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
    assert_eq!(read(&a, "report.json"), read(&b, "report.json"));
    assert_eq!(read(&a, "trace.jsonl"), read(&b, "trace.jsonl"));
    let report: serde_json::Value = serde_json::from_slice(&read(&c, "report.json")).unwrap();
    assert_eq!(report["seed"], 99);
}

#[test]
fn unknown_key_is_config_error() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path().join("bad.toml");
    fs::write(&p, "n = 4\nseed = 1\nnot_a_key = 3\n").unwrap();
    let o = battle(&["run", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not_a_key"));
}

#[test]
fn bad_values_and_flags_are_config_errors() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path().join("bad.toml");
    fs::write(&p, "n = 0\n").unwrap();
    assert_eq!(battle(&["run", p.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(battle(&["run", "/nonexistent/scenario.toml"]).status.code(), Some(2));
    assert_eq!(battle(&["run", &scenario("three_of_eight.toml"), "--seed", "x"]).status.code(), Some(2));
    assert_eq!(battle(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn enumerate_reports_points_and_respects_cap() {
    let t = tempfile::tempdir().unwrap();
    let d = out_dir(&t, "e");
    let s = scenario("space_n4.toml");
    let o = battle(&["enumerate", &s, "--jobs", "1", "--out-dir", d.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    // Four parties, each Honest, Abstain or stalling after round 1 or 2.
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("points 256  violations 0"));
    assert_eq!(fs::read_to_string(d.join("violations.jsonl")).unwrap(), "");
    assert!(d.join("summary.json").exists());
    assert_eq!(battle(&["enumerate", &s, "--cap", "10"]).status.code(), Some(2));
}

#[test]
fn dag_export_and_diff() {
    let t = tempfile::tempdir().unwrap();
    let (d4, d8) = (out_dir(&t, "four"), out_dir(&t, "eight"));
    assert_eq!(battle(&["dag-export", "--n", "4", "--out-dir", d4.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(battle(&["dag-export", "--n", "8", "--out-dir", d8.to_str().unwrap()]).status.code(), Some(0));
    let (a, b) = (d4.join("dag_n4.json"), d8.join("dag_n8.json"));

    let same = battle(&["dag-diff", a.to_str().unwrap(), a.to_str().unwrap()]);
    assert_eq!(same.status.code(), Some(0));
    let same: serde_json::Value = serde_json::from_slice(&same.stdout).unwrap();
    let diff = battle(&["dag-diff", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(diff.status.code(), Some(0));
    let diff: serde_json::Value = serde_json::from_slice(&diff.stdout).unwrap();
    assert_ne!(same, diff);

    let export: serde_json::Value = serde_json::from_str(&fs::read_to_string(&a).unwrap()).unwrap();
    assert_eq!(export["nodes"].as_array().unwrap().len(), 83);

    let junk = t.path().join("junk.json");
    fs::write(&junk, "{").unwrap();
    assert_eq!(battle(&["dag-diff", junk.to_str().unwrap(), a.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn cost_table() {
    let t = tempfile::tempdir().unwrap();
    let d = out_dir(&t, "cost");
    let o = battle(&["cost", &scenario("cost_n1000.toml"), "--dag-bytes", "1000000", "--out-dir", d.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<serde_json::Value> =
        fs::read_to_string(d.join("cost.jsonl")).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!rows.is_empty());
    assert_eq!(rows.len(), String::from_utf8_lossy(&o.stdout).lines().count());
}
