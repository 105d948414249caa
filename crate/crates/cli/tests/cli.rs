use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hinmal(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hinmal"))
        .args(args)
        .args(["--out", dir.to_str().unwrap()])
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Value {
    let out = hinmal(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn error_record(out: &Output) -> Value {
    serde_json::from_str(String::from_utf8_lossy(&out.stderr).lines().last().unwrap()).unwrap()
}

const SMALL: [&str; 8] = [
    "--set",
    "synthetic.n_in=80",
    "--set",
    "synthetic.n_out=20",
    "--set",
    "train.epochs=5",
    "--set",
    "train.dim=8",
];

fn with_small<'a>(cmd: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend(SMALL);
    v.extend(extra);
    v
}

fn run_pipeline(dir: &Path) {
    for cmd in ["gen", "build", "train", "embed", "detect", "eval"] {
        ok(dir, &with_small(cmd, &[]));
    }
}

#[test]
fn pipeline_produces_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(dir.path());
    for f in [
        "manifest.jsonl",
        "permissions.csv",
        "batch.jsonl",
        "batch_truth.jsonl",
        "hin.bin",
        "adjacency.bin",
        "model.ckpt",
        "embeddings_in.tsv",
        "embeddings_out.tsv",
        "audit.jsonl",
        "verdicts.jsonl",
        "train_report.json",
        "eval_report.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("eval_report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 0);
    let fold = &report["folds"][0];
    let total: u64 = ["tp", "tn", "fp", "fn"].iter().map(|k| fold[*k].as_u64().unwrap()).sum();
    assert_eq!(total, 20);
    let verdicts = std::fs::read_to_string(dir.path().join("verdicts.jsonl")).unwrap();
    assert_eq!(verdicts.lines().count(), 20);
}

#[test]
fn identical_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(a.path());
    run_pipeline(b.path());
    for f in ["model.ckpt", "embeddings_in.tsv", "embeddings_out.tsv", "verdicts.jsonl", "audit.jsonl"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn seed_flag_changes_data() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let x = ok(a.path(), &with_small("gen", &[]));
    let y = ok(b.path(), &with_small("gen", &["--seed", "5"]));
    assert_eq!(y["seed"], 5);
    assert_ne!(x["fingerprint"], y["fingerprint"]);
}

#[test]
fn empty_batch_gives_empty_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["gen", "build", "train"] {
        ok(dir.path(), &with_small(cmd, &[]));
    }
    std::fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let summary = ok(dir.path(), &with_small("embed", &["--set", "paths.batch=empty.jsonl"]));
    assert_eq!(summary["apps"], 0);
    assert_eq!(std::fs::read_to_string(dir.path().join("embeddings_out.tsv")).unwrap(), "");
    let detect = ok(dir.path(), &with_small("detect", &[]));
    assert_eq!(detect["apps"], 0);
}

#[test]
fn fine_tuning_uses_calibration_batch() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["gen", "build", "train"] {
        ok(dir.path(), &with_small(cmd, &[]));
    }
    let missing = hinmal(dir.path(), &with_small("embed", &["--set", "incremental.fine_tune_beta=true"]));
    assert_eq!(missing.status.code(), Some(1));

    // The labeled batch serves as calibration data.
    let truth: Vec<Value> = std::fs::read_to_string(dir.path().join("batch_truth.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let calibration: String = std::fs::read_to_string(dir.path().join("batch.jsonl"))
        .unwrap()
        .lines()
        .zip(&truth)
        .map(|(l, t)| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            v["label"] = t["label"].clone();
            format!("{v}\n")
        })
        .collect();
    std::fs::write(dir.path().join("calibration.jsonl"), calibration).unwrap();
    let plain = ok(dir.path(), &with_small("embed", &[]));
    let tuned = ok(
        dir.path(),
        &with_small(
            "embed",
            &["--set", "incremental.fine_tune_beta=true", "--set", "paths.calibration=calibration.jsonl"],
        ),
    );
    let sum: f64 = tuned["beta"].as_array().unwrap().iter().map(|b| b.as_f64().unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-9);
    assert_ne!(plain["beta"], tuned["beta"]);
}

#[test]
fn cross_validation_report() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &with_small("gen", &[]));
    ok(dir.path(), &with_small("build", &[]));
    let r = ok(dir.path(), &with_small("eval", &["--set", "eval.mode=cv", "--set", "eval.folds=3"]));
    assert_eq!(r["folds"].as_array().unwrap().len(), 3);
    assert!(r["mean"]["acc"].as_f64().unwrap() > 0.8);
}

#[test]
fn bench_reports_consistent_gap() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["gen", "build", "train"] {
        ok(dir.path(), &with_small(cmd, &[]));
    }
    let r = ok(dir.path(), &with_small("bench", &["--set", "bench.repetitions=1"]));
    let gap = r["accuracy_gap"]["f1"].as_f64().unwrap();
    let inc = r["incremental"]["metrics"]["f1"].as_f64().unwrap();
    let rerun = r["rerun"]["metrics"]["f1"].as_f64().unwrap();
    assert!((gap - (inc - rerun)).abs() < 1e-12);
    assert!(r["speedup"].as_f64().unwrap() > 0.0);
}

#[test]
fn help_and_version_succeed() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hinmal(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(hinmal(dir.path(), &["--version"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one_with_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = hinmal(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_record(&out)["error"], "usage");

    let out = hinmal(dir.path(), &["gen", "--set", "train.nope=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_record(&out)["error"], "config");

    let out = hinmal(dir.path(), &["train"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_record(&out)["exit_code"], 1);
}

#[test]
fn malformed_manifest_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("manifest.jsonl"), "{\"app\": 3}\n").unwrap();
    std::fs::write(dir.path().join("permissions.csv"), "").unwrap();
    let out = hinmal(dir.path(), &["build"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["error"], "parse");
}

#[test]
fn divergent_training_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &with_small("gen", &[]));
    ok(dir.path(), &with_small("build", &[]));
    let out = hinmal(dir.path(), &with_small("train", &["--set", "train.learning_rate=1e200"]));
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_record(&out)["error"], "numerical");
}

#[test]
fn config_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ok(dir.path(), &["config", "--seed", "9", "--set", "train.dim=32"]);
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let again = ok(dir.path(), &["config", "--config", path.to_str().unwrap()]);
    assert_eq!(cfg, again);
    assert_eq!(again["train"]["seed"], 9);
}
