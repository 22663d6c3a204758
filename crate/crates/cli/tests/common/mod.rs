#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn repo() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn toy(name: &str) -> PathBuf {
    repo().join("data/toy").join(name)
}

pub fn toy_config() -> PathBuf {
    repo().join("configs/toy.toml")
}

/// Runs `slm --config configs/toy.toml <args>` inside `dir`.
pub fn slm(dir: &Path, args: &[&str]) -> Output {
    let config = toy_config();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_slm"));
    cmd.current_dir(dir)
        .env_remove("SLM_ARTIFACT_ROOT")
        .arg("--config")
        .arg(&config)
        .args(args);
    cmd.output().expect("spawn slm")
}

pub fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// clean → dedup → tokenizer train under `dir`; returns the vocab path.
pub fn build_vocab(dir: &Path, exec: &str) -> PathBuf {
    let set = format!("exec=\"{exec}\"");
    let raw = toy("raw.jsonl");
    let (clean, dedup, vocab) = (
        dir.join("clean.jsonl"),
        dir.join("dedup.jsonl"),
        dir.join("vocab.txt"),
    );
    ok(slm(
        dir,
        &[
            "--set",
            &set,
            "clean",
            "--input",
            s(&raw),
            "--output",
            s(&clean),
        ],
    ));
    ok(slm(
        dir,
        &[
            "--set",
            &set,
            "dedup",
            "--input",
            s(&clean),
            "--output",
            s(&dedup),
        ],
    ));
    ok(slm(
        dir,
        &[
            "--set",
            &set,
            "tokenizer",
            "train",
            "--corpus",
            s(&dedup),
            "--output",
            s(&vocab),
        ],
    ));
    vocab
}

pub fn golden_vocab_digest() -> String {
    std::fs::read_to_string(toy("vocab.sha256"))
        .unwrap()
        .split_whitespace()
        .next()
        .unwrap()
        .to_string()
}
