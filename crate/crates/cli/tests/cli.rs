use std::path::Path;
use std::process::{Command, Output};

use activelab::synth::SynthConfig;

fn activelab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_activelab"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// A small generator config so the commands finish quickly.
fn small_config(dir: &Path) {
    let cfg = SynthConfig {
        n_pool: 200,
        n_test: 80,
        ..SynthConfig::lusms_synth_v1(3)
    };
    std::fs::write(dir.join("cfg.json"), serde_json::to_string(&cfg).unwrap()).unwrap();
}

#[test]
fn generate_run_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d);
    ok(activelab(&["generate", "--config", "cfg.json", "--out", "data.jsonl"], d));
    let lines = std::fs::read_to_string(d.join("data.jsonl")).unwrap().lines().count();
    assert_eq!(lines, 281);

    let run = ["run", "--data", "data.jsonl", "--strategy", "lc", "--k-max", "20", "--iterations", "3", "--threshold", "0.5", "--seed", "9"];
    ok(activelab(&[&run[..], &["--report", "a.jsonl"]].concat(), d));
    ok(activelab(&[&run[..], &["--report", "b.jsonl"]].concat(), d));
    let a = std::fs::read(d.join("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.jsonl")).unwrap());
    // header, three iterations, trailer
    assert_eq!(a.iter().filter(|&&b| b == b'\n').count(), 5);

    let csv = ok(activelab(&["report", "a.jsonl"], d));
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("iteration,labeled_count,"));
    assert!(rows[0].contains("P-effusion:auc"));
    assert!(rows[3].starts_with("3,60,0.3,140,"));
    ok(activelab(&["report", "a.jsonl", "--out", "a.csv"], d));
    assert_eq!(std::fs::read_to_string(d.join("a.csv")).unwrap(), csv);
}

#[test]
fn baseline_reports_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d);
    ok(activelab(&["generate", "--config", "cfg.json", "-o", "data.jsonl"], d));
    let out = ok(activelab(&["baseline", "--data", "data.jsonl", "--epochs", "10"], d));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["kind"], "baseline");
    assert_eq!(v["labeled_count"], 200);
    assert_eq!(v["evaluation"]["per_label"].as_array().unwrap().len(), 4);
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = activelab(&["run", "--strategy", "greedy"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown strategy"));

    std::fs::write(d.join("broken.jsonl"), "{\"format\":\"activelab-dataset\"\n").unwrap();
    let out = activelab(&["run", "--data", "broken.jsonl"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));

    let out = activelab(&["run", "--threshold", "1.5", "--iterations", "1"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("threshold"));

    std::fs::write(d.join("empty.jsonl"), "").unwrap();
    assert!(!activelab(&["report", "empty.jsonl"], d).status.success());
}
