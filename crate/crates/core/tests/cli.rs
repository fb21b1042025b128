mod common;

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_latent-trees"));
    c.env_remove("LATENT_TREES_DATA");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = bin().current_dir(dir).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

const TRAIN: &[&str] = &[
    "train", "--model", "bssr", "--dim", "8", "--hidden", "8", "--epochs", "2", "--batch-size", "8",
    "--beam-start", "4", "--beam-end", "2", "--beam-anneal-epochs", "1", "--data-dir", ".",
    "--train-limit", "24", "--dev-limit", "9",
];

/// Runs the whole pipeline in `d` with fixed relative paths.
fn pipeline(d: &Path, extra: &[&str]) {
    common::write_snli_layout(d, 40, 12);
    let mut args = TRAIN.to_vec();
    args.extend(["--seed", "3", "--checkpoint", "m.ckpt", "--metrics", "m.jsonl"]);
    args.extend(extra);
    run(d, &args);
    run(d, &["eval", "--checkpoint", "m.ckpt", "--data-dir", ".", "--out", "p.jsonl"]);
    run(d, &["induce", "--checkpoint", "m.ckpt", "--data-dir", ".", "--out", "t.txt"]);
    run(d, &["baseline", "--kind", "random", "--seed", "7", "--data-dir", ".", "--out", "r.txt"]);
    run(d, &["baseline", "--kind", "gold", "--data-dir", ".", "--out", "g.txt"]);
    run(d, &["compare", "t.txt", "r.txt", "--gold", "g.txt", "--out", "report.json"]);
}

const OUTPUTS: &[&str] = &["m.ckpt", "m.jsonl", "p.jsonl", "t.txt", "r.txt", "g.txt", "report.json"];

#[test]
fn every_subcommand_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path(), &[]);
    pipeline(b.path(), &[]);
    for name in OUTPUTS {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
    }
    let metrics = String::from_utf8(read(a.path(), "m.jsonl")).unwrap();
    for line in metrics.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["step", "epoch", "loss", "train_acc", "dev_acc", "beam_width"] {
            assert!(v.get(key).is_some(), "{key} missing in {line}");
        }
    }
    let trees = String::from_utf8(read(a.path(), "t.txt")).unwrap();
    assert_eq!(trees.lines().count(), 24);
}

#[test]
fn sequential_fallback_matches_and_seeds_differ() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path(), &[]);
    pipeline(b.path(), &["--sequential"]);
    for name in OUTPUTS {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
    }
    let d = a.path();
    let mut args = TRAIN.to_vec();
    args.extend(["--seed", "4", "--checkpoint", "m.ckpt"]);
    let before = read(d, "m.ckpt");
    run(d, &args);
    assert_ne!(before, read(d, "m.ckpt"));
}

#[test]
fn data_dir_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    common::write_snli_layout(d, 6, 6);
    let out = bin()
        .current_dir(d)
        .env("LATENT_TREES_DATA", d)
        .args(["baseline", "--kind", "left", "--out", "left.txt"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(read(d, "left.txt")).unwrap();
    assert_eq!(text.lines().count(), 12);
}

#[test]
fn compare_reports_one_decimal_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    common::write_snli_layout(d, 20, 20);
    run(d, &["baseline", "--kind", "left", "--data-dir", ".", "--out", "l.txt"]);
    let out = run(d, &["compare", "l.txt", "l.txt", "l.txt", "--out", "r.json"]);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("Self-F1"), "{table}");
    assert!(table.contains("100.0 (0.0) 100.0"), "{table}");
    let report: serde_json::Value = serde_json::from_slice(&read(d, "r.json")).unwrap();
    assert_eq!(report["self_f1"], 100.0);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let code = |args: &[&str]| bin().current_dir(d).args(args).output().unwrap().status.code();
    assert_eq!(code(&["train", "--no-such-flag"]), Some(2));
    assert_eq!(code(&["baseline", "--kind", "left", "--out", "x.txt"]), Some(2));
    assert_eq!(code(&["eval", "--checkpoint", "missing.ckpt", "--corpus", "missing.jsonl"]), Some(2));
    assert_eq!(code(&["train", "--beam-start", "2", "--beam-end", "3"]), Some(2));
    std::fs::write(d.join("bad.ckpt"), b"not a checkpoint").unwrap();
    assert_eq!(code(&["eval", "--checkpoint", "bad.ckpt", "--corpus", "bad.ckpt"]), Some(1));
    assert!(!d.join("x.txt").exists());
}
