//! End-to-end runs of the `aggcn` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use aggcn::data::read_corpus;

fn aggcn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aggcn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = aggcn(args);
    assert!(
        out.status.success(),
        "aggcn {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &[&str] = &[
    "--synthetic",
    "n=40,dist=0",
    "--preset",
    "desk",
    "--d",
    "16",
    "--d-word",
    "16",
    "--epochs",
    "2",
    "--seed",
    "3",
];

fn train_small(out: &Path) {
    let mut args = vec!["train"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--out", path(out)]);
    ok(&args);
}

#[test]
fn train_writes_outputs_and_eval_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    train_small(&run);
    for f in ["checkpoint.bin", "history.jsonl", "metrics.json", "confusion.csv"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let history = fs::read_to_string(run.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 2);

    let ck = run.join("checkpoint.bin");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out_a = ok(&["eval", "--checkpoint", path(&ck), "--out", path(&a)]);
    let out_b = ok(&["eval", "--checkpoint", path(&ck), "--out", path(&b)]);
    assert_eq!(out_a, out_b);
    for f in ["eval.json", "confusion.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn bad_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.bin");
    assert_eq!(aggcn(&["eval", "--checkpoint", path(&missing)]).status.code(), Some(2));
    assert_eq!(aggcn(&["prune", "--synthetic", "n=3", "--k", "kx"]).status.code(), Some(2));
    assert_eq!(aggcn(&["train", "--synthetic", "n=10", "--bogus"]).status.code(), Some(2));
    let junk = dir.path().join("junk.bin");
    fs::write(&junk, b"not a checkpoint").unwrap();
    assert_eq!(aggcn(&["eval", "--checkpoint", path(&junk)]).status.code(), Some(2));
}

#[test]
fn attention_export_one_file_per_head_with_stochastic_rows() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    train_small(&run);
    let att = dir.path().join("att");
    let ck = run.join("checkpoint.bin");
    ok(&["attention", "--checkpoint", path(&ck), "--id", "syn-00001", "--out", path(&att)]);
    let mut files: Vec<_> = fs::read_dir(&att).unwrap().map(|e| e.unwrap().file_name()).collect();
    files.sort();
    assert_eq!(
        files,
        ["attention_block2_head1.csv", "attention_block2_head2.csv", "attention_block2_head3.csv"]
    );
    for f in files {
        let mut reader = csv::Reader::from_path(att.join(f)).unwrap();
        let n = reader.headers().unwrap().len() - 1;
        let rows: Vec<_> = reader.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), n);
        for r in rows {
            let sum: f64 = r.iter().skip(1).map(|x| x.parse::<f64>().unwrap()).sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn synth_files_round_trip_and_prune_hides_distant_cue() {
    let dir = tempfile::tempdir().unwrap();
    let syn = dir.path().join("syn");
    ok(&["synth", "--synthetic", "n=30,dist=2,seed=4", "--out", path(&syn)]);
    let train = syn.join("train.jsonl");
    let corpus = read_corpus(&train).unwrap();
    assert!(!corpus.is_empty());

    let listing = ok(&["prune", "--train", path(&train), "--k", "k1"]);
    let mut seen = 0;
    for line in listing.lines().filter(|l| l.starts_with("syn-")) {
        let cols: Vec<&str> = line.split('\t').collect();
        let inst = corpus.find(cols[0]).unwrap();
        let cue = inst.graph.tokens().iter().position(|t| t.starts_with("cue")).unwrap();
        let kept: Vec<usize> = cols[2].split(',').map(|i| i.parse().unwrap()).collect();
        assert!(!kept.contains(&(cue + 1)), "{} keeps its cue", cols[0]);
        seen += 1;
    }
    assert_eq!(seen, corpus.len());
}

#[test]
fn overfit_run_scores_high_on_its_training_set() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let spec = ["--synthetic", "n=200,dist=0", "--preset", "desk"];
    let mut args = vec!["train"];
    args.extend_from_slice(&spec);
    args.extend_from_slice(&["--lr", "0.02", "--optimizer", "sgd", "--epochs", "15", "--out", path(&run)]);
    ok(&args);
    let ev = dir.path().join("ev");
    let ck = run.join("checkpoint.bin");
    let mut args = vec!["eval"];
    args.extend_from_slice(&spec);
    args.extend_from_slice(&["--checkpoint", path(&ck), "--on", "train", "--out", path(&ev)]);
    ok(&args);
    let result: serde_json::Value = serde_json::from_slice(&fs::read(ev.join("eval.json")).unwrap()).unwrap();
    let acc = result["accuracy"].as_f64().unwrap();
    assert!(acc >= 0.95, "training accuracy {acc}");
}
