//! End-to-end runs of the `compton` binary with a small LUT.

use std::path::Path;
use std::process::{Command, Output};

fn compton(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_compton"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("COMPTON_LUT_DIR")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = compton(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

const SMALL: &str = r#"{
  "seed": 3,
  "lut": {"n_nodes": 40, "n_samples": 400, "grid": 16, "bandwidth_scale": 3.0, "seed": 5},
  "lut_dir": "lut",
  "gibbs": {"bp_pixels": 2000}
}"#;

fn rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn simulate_em_localize_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("c.json"), SMALL).unwrap();
    ok(dir, &["--config", "c.json", "simulate", "-o", "sim"]);
    assert_eq!(rows(&dir.join("sim/events.jsonl")) + 1, 10);
    ok(dir, &["--config", "c.json", "em", "--events", "sim/events.jsonl", "-o", "em"]);
    let em: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("em/em.json")).unwrap()).unwrap();
    for key in ["E0", "sigma", "p_A", "p_CS", "iterations", "classifications"] {
        assert!(em.get(key).is_some(), "missing {key}");
    }
    ok(dir, &["--config", "c.json", "localize", "--events", "sim/events.jsonl", "--em", "em/em.json", "-o", "loc"]);
    assert_eq!(rows(&dir.join("loc/chain_1.csv")), 8000);
    let diag: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("loc/diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["sigma_traces"], "sigma_traces.csv");
    ok(dir, &["--config", "c.json", "evaluate", "loc/summary.json", "-o", "eval"]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("eval/evaluation.json")).unwrap()).unwrap();
    assert_eq!(report["runs"], 1);

    // same seed, same chain
    ok(dir, &["--config", "c.json", "localize", "--events", "sim/events.jsonl", "--em", "em/em.json", "-o", "loc-again"]);
    assert_eq!(
        std::fs::read(dir.join("loc/chain_1.csv")).unwrap(),
        std::fs::read(dir.join("loc-again/chain_1.csv")).unwrap()
    );
}

#[test]
fn two_sources_give_two_chain_files() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("c.json"), SMALL).unwrap();
    ok(dir, &["--config", "c.json", "simulate", "-n", "20", "--source", "0,0", "--source", "120,0", "-o", "sim"]);
    ok(
        dir,
        &[
            "--config", "c.json", "localize", "--events", "sim/events.jsonl", "--truth-kinds", "-k", "2",
            "--iterations", "1500", "--burn-in", "500", "-o", "loc",
        ],
    );
    assert!(dir.join("loc/chain_1.csv").is_file());
    assert!(dir.join("loc/chain_2.csv").is_file());
    assert!(!dir.join("loc/chain_3.csv").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("loc/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["sources"].as_array().unwrap().len(), 2);
    let total = rows(&dir.join("loc/chain_1.csv")) + rows(&dir.join("loc/chain_2.csv"));
    assert_eq!(total, 2000);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    // config errors: missing seed, bad key, missing referenced file
    assert_eq!(compton(dir, &["simulate"]).status.code(), Some(2));
    std::fs::write(dir.join("bad.json"), "{\n \"seed\": 1,\n \"nevents\": 4\n}").unwrap();
    let out = compton(dir, &["--config", "bad.json", "simulate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.json:3:"));
    assert_eq!(compton(dir, &["--seed", "1", "--attenuation", "nope.csv", "simulate"]).status.code(), Some(2));
    assert_eq!(compton(dir, &["--seed", "1", "localize", "--events", "x"]).status.code(), Some(2));

    // data errors: empty event file, malformed line, missing kinds
    ok(dir, &["--seed", "1", "simulate", "-n", "0", "-o", "empty"]);
    assert_eq!(std::fs::read(dir.join("empty/events.jsonl")).unwrap().len(), 0);
    assert!(dir.join("empty/simulate.manifest.json").is_file());
    assert_eq!(compton(dir, &["--seed", "1", "em", "--events", "empty/events.jsonl"]).status.code(), Some(3));

    ok(dir, &["--seed", "1", "simulate", "-n", "5", "-o", "sim"]);
    let mut text = std::fs::read_to_string(dir.join("sim/events.jsonl")).unwrap();
    text = text.replacen("\n", "\n{not json\n", 2);
    std::fs::write(dir.join("broken.jsonl"), &text).unwrap();
    let out = compton(dir, &["--seed", "1", "em", "--events", "broken.jsonl"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("broken.jsonl:2"), "{}", String::from_utf8_lossy(&out.stderr));

    let stripped: String = std::fs::read_to_string(dir.join("sim/events.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("truth");
            format!("{v}\n")
        })
        .collect();
    std::fs::write(dir.join("bare.jsonl"), stripped).unwrap();
    let out = compton(dir, &["--seed", "1", "localize", "--events", "bare.jsonl", "--truth-kinds"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(compton(dir, &["--seed", "1", "evaluate", "nothing.json"]).status.code(), Some(3));
}
