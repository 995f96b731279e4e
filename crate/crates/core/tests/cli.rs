mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::triage_fixture;

const BIN: &str = env!("CARGO_BIN_EXE_seqling");

/// A small but complete configuration so each command runs in well under a
/// second.
const SMALL: &str = "\
seed = 3
n_records = 200
seq_len = 120
max_len = 120
conv_filters = 4,6
conv_kernels = 5,3
conv_strides = 1,1
conv_pools = 2,global
embedding_dim = 6
epochs = 3
n_trees = 20
";

fn seqling(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().unwrap()
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status,
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), SMALL).unwrap();
    dir
}

#[test]
fn synth_train_evaluate_predict_importance() {
    let dir = setup();
    let d = dir.path();
    ok(&seqling(d, &["synth", "--config", "run.cfg", "--task", "positional_motif", "--out", "bench"]));
    for f in ["dataset.csv", "truth.csv", "train.csv", "test.csv", "synth_manifest.json"] {
        assert!(d.join("bench").join(f).exists(), "{f}");
    }
    ok(&seqling(d, &["train", "--config", "run.cfg", "--train", "bench/train.csv", "--out", "m"]));
    assert!(d.join("m/model.json").exists());
    let log = std::fs::read_to_string(d.join("m/training_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);

    ok(&seqling(
        d,
        &["evaluate", "--config", "run.cfg", "--model", "m/model.json", "--test", "bench/test.csv", "--out", "ev"],
    ));
    let metrics = std::fs::read_to_string(d.join("ev/metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "precision").unwrap();
    assert!(!row[col].is_empty());

    ok(&seqling(d, &["predict", "--model", "m/model.json", "--data", "bench/test.csv", "--out", "pr"]));
    let preds = std::fs::read_to_string(d.join("pr/predictions.csv")).unwrap();
    assert!(preds.starts_with("id,probability,predicted_label,selected\n"));
    let test_rows = std::fs::read_to_string(d.join("bench/test.csv")).unwrap().lines().count();
    assert_eq!(preds.lines().count(), test_rows);

    ok(&seqling(d, &["importance", "--model", "m/model.json", "--top-n", "5", "--out", "im"]));
    let imp = std::fs::read_to_string(d.join("im/importance.csv")).unwrap();
    assert_eq!(imp.lines().count(), 6);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("m/train_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["config"]["epochs"], "3");
    assert_eq!(manifest["inputs"][0]["key"], "train");
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn evaluate_with_runs_writes_stability_summary() {
    let dir = setup();
    let d = dir.path();
    ok(&seqling(d, &["synth", "--config", "run.cfg", "--out", "b"]));
    ok(&seqling(
        d,
        &[
            "evaluate", "--config", "run.cfg", "--train", "b/train.csv", "--test", "b/test.csv", "--runs", "3",
            "--wiring", "handcrafted_only", "--out", "e",
        ],
    ));
    assert_eq!(std::fs::read_to_string(d.join("e/metrics.csv")).unwrap().lines().count(), 4);
    let summary = std::fs::read_to_string(d.join("e/stability_summary.csv")).unwrap();
    assert!(summary.starts_with("statistic,precision,recall,f1\nmean,"));
}

#[test]
fn ingest_from_fasta_pair_and_featurize() {
    let dir = setup();
    let d = dir.path();
    let mut pos = String::new();
    let mut neg = String::new();
    for i in 0..20 {
        pos.push_str(&format!(">p{i}\nACGTTTTACG{}\n", "ACGT".repeat(i % 5 + 1)));
        neg.push_str(&format!(">n{i}\nGGCCAAGGCC{}\n", "GCAT".repeat(i % 4 + 1)));
    }
    std::fs::write(d.join("pos.fa"), &pos).unwrap();
    std::fs::write(d.join("neg.fa"), &neg).unwrap();
    ok(&seqling(d, &["ingest", "--positive", "pos.fa", "--negative", "neg.fa", "--out", "in"]));
    let data = std::fs::read_to_string(d.join("in/dataset.csv")).unwrap();
    assert_eq!(data.lines().count(), 41);
    ok(&seqling(d, &["featurize", "--input", "pos.fa", "--k", "1,2", "--out", "f"]));
    let feats = std::fs::read_to_string(d.join("f/features.csv")).unwrap();
    assert_eq!(feats.lines().count(), 21);
}

#[test]
fn coexp_report_matches_library() {
    let dir = setup();
    let d = dir.path();
    let (e, a, deg, p) = triage_fixture();
    for (name, text) in [("edges.tsv", &e), ("ann.tsv", &a), ("deg.tsv", &deg), ("preds.csv", &p)] {
        std::fs::write(d.join(name), text).unwrap();
    }
    ok(&seqling(
        d,
        &[
            "coexp", "--network", "edges.tsv", "--annotations", "ann.tsv", "--deg", "deg.tsv", "--predictions",
            "preds.csv", "--out", "c",
        ],
    ));
    let report = std::fs::read_to_string(d.join("c/triage_report.txt")).unwrap();
    assert!(report.contains("seeds (2): Os11g0116300, OsXXg0000000"));
    assert!(report.contains("DEG overlap (1 genes):"));
}

#[test]
fn missing_config_file_is_a_config_error_naming_the_path() {
    let dir = setup();
    let o = seqling(dir.path(), &["train", "--config", "nowhere.cfg"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.cfg"), "{}", stderr(&o));
}

#[test]
fn unknown_key_and_bad_value_are_config_errors() {
    let dir = setup();
    let o = seqling(dir.path(), &["train", "--no-such-key", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no-such-key"), "{}", stderr(&o));

    let o = seqling(dir.path(), &["train", "--data", "x.csv", "--learning_rate", "fast"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));

    let o = seqling(dir.path(), &["train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("data"), "{}", stderr(&o));

    let o = seqling(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_fasta_is_a_data_error_with_file_and_line() {
    let dir = setup();
    let d = dir.path();
    std::fs::write(d.join("bad.fa"), ">a\nACGT\nACGT\n>\nACGT\n").unwrap();
    let o = seqling(d, &["featurize", "--input", "bad.fa", "--out", "f"]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("bad.fa") && err.contains("line 4"), "{err}");
    assert!(!d.join("f/features.csv").exists());
}

#[test]
fn inputs_are_not_modified() {
    let dir = setup();
    let d = dir.path();
    ok(&seqling(d, &["synth", "--config", "run.cfg", "--out", "b"]));
    let before = std::fs::read(d.join("b/train.csv")).unwrap();
    let cfg_before = std::fs::read(d.join("run.cfg")).unwrap();
    ok(&seqling(
        d,
        &["train", "--config", "run.cfg", "--train", "b/train.csv", "--wiring", "handcrafted_only", "--out", "m"],
    ));
    assert_eq!(std::fs::read(d.join("b/train.csv")).unwrap(), before);
    assert_eq!(std::fs::read(d.join("run.cfg")).unwrap(), cfg_before);
}

#[test]
fn help_exits_zero() {
    let dir = setup();
    let o = seqling(dir.path(), &["--help"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("usage: seqling"));
}
