use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hrsn(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_hrsn")).current_dir(dir).args(args).output().unwrap();
    assert!(out.status.success(), "hrsn {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

const CONFIG: &str = "word_dim = 20\nsentence_dim = 4\ndocument_dim = 3\nmax_words = 12\nmax_sentences = 15\nmax_epochs = 2\nfolds = 5\n";

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.toml"), CONFIG).unwrap();
    hrsn(dir.path(), &["synthetic", "--out", "syn", "--instances", "40", "--seed", "5"]);
    dir
}

const DATA: &[&str] = &["--config", "cfg.toml", "--corpus", "syn/corpus.jsonl", "--embeddings", "syn/embeddings.txt"];

fn with<'a>(head: &[&'a str], tail: &[&'a str]) -> Vec<&'a str> {
    head.iter().chain(DATA).chain(tail).copied().collect()
}

#[test]
fn cross_validation_is_byte_identical_when_deterministic() {
    let dir = workspace();
    let p = dir.path();
    hrsn(p, &with(&["cross-validate"], &["--deterministic", "--threads", "2", "--out", "a.json"]));
    hrsn(p, &with(&["cross-validate"], &["--deterministic", "--out", "b.json"]));
    let a = fs::read(p.join("a.json")).unwrap();
    assert_eq!(a, fs::read(p.join("b.json")).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(report["schema"], "hrsn-cv-report");
    assert_eq!(report["folds"].as_array().unwrap().len(), 5);

    let table = String::from_utf8(hrsn(p, &["report", "a.json"]).stdout).unwrap();
    assert_eq!(table.lines().count(), 7);
    assert!(table.lines().last().unwrap().starts_with("mean ± sample std (%)"));
}

#[test]
fn train_then_verify() {
    let dir = workspace();
    let p = dir.path();
    let log = hrsn(p, &with(&["train"], &["--checkpoint", "model.json", "--deterministic"]));
    let epochs: Vec<serde_json::Value> = String::from_utf8(log.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(epochs.len(), 2);
    assert_eq!(epochs[1]["epoch"], 2);

    fs::write(p.join("a.txt"), "W001 w002 w003. W004 w001.").unwrap();
    fs::write(p.join("b.txt"), "W010 w011.").unwrap();
    let out = hrsn(p, &["verify", "--checkpoint", "model.json", "--embeddings", "syn/embeddings.txt", "a.txt", "b.txt"]);
    let score: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let d = score["distance"].as_f64().unwrap();
    assert!(d >= 0.0);
    assert_eq!(score["threshold"], 2.0);
    assert_eq!(score["decision"], if d < 2.0 { "same_author" } else { "different_authors" });

    let same = hrsn(p, &["verify", "--checkpoint", "model.json", "--embeddings", "syn/embeddings.txt", "a.txt", "a.txt"]);
    let same: serde_json::Value = serde_json::from_slice(&same.stdout).unwrap();
    assert_eq!(same["distance"], 0.0);
}

#[test]
fn preprocess_writes_one_line_per_instance() {
    let dir = workspace();
    let p = dir.path();
    let out = hrsn(p, &with(&["preprocess"], &["--out", "cache.jsonl"]));
    assert_eq!(fs::read_to_string(p.join("cache.jsonl")).unwrap().lines().count(), 40);
    let stats: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(stats["oov"], 0);
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = hrsn(dir.path(), &["gradcheck", "--configs", "2"]);
    let lines = String::from_utf8(out.stdout).unwrap();
    let summary = String::from_utf8(out.stderr).unwrap();
    assert_eq!(summary.trim(), format!("{} checks, 0 failed", lines.lines().count()));
    for l in lines.lines() {
        let r: serde_json::Value = serde_json::from_str(l).unwrap();
        assert!(r["failures"].as_array().unwrap().is_empty(), "{l}");
    }
}

#[test]
fn missing_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hrsn")).current_dir(dir.path()).args(["cross-validate"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--embeddings is required"));
}
