#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const TINY: &str = "\
[model]
depth = 2
base_channels = 8
channel_multipliers = [1, 2]
attention_stages = [1]
embed_dim = 16
[train]
epochs = 2
batch = 8
[data]
n_pairs = 16
";

pub fn rddm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rddm"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

pub fn ok(dir: &Path, args: &[&str]) -> String {
    let out = rddm(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn usage_error(dir: &Path, args: &[&str]) -> String {
    let out = rddm(dir, args);
    assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stderr).unwrap()
}

/// Runs the whole pipeline in `dir` and returns the files it wrote.
pub fn pipeline(dir: &Path) -> Vec<PathBuf> {
    fs::write(dir.join("tiny.toml"), TINY).unwrap();
    ok(dir, &["synth", "--out", "val.csv", "--pairs", "6", "--seed", "3", "--raw-dir", "raw"]);
    let mut raw: Vec<PathBuf> = fs::read_dir(dir.join("raw")).unwrap().map(|e| e.unwrap().path()).collect();
    raw.sort();
    assert_eq!(raw.len(), 6);
    let first = raw[0].to_str().unwrap().to_string();
    ok(dir, &["preprocess", "--input", &first, raw[1].to_str().unwrap(), "--out", "pre.bin"]);
    ok(dir, &["mask", "--windows", "val.csv", "--gamma", "32", "--out", "mask.csv"]);
    ok(dir, &["train", "--config", "tiny.toml", "--seed", "7", "--out", "m.json", "--quiet"]);
    ok(dir, &["sample", "--checkpoint", "m.json", "--input", "val.csv", "--out", "gen.csv", "--seed", "2"]);
    ok(dir, &["eval", "--generated", "gen.csv", "--truth", "val.csv", "--out", "eval.csv"]);
    ok(dir, &["sweep", "--param", "steps", "--values", "2,3", "--checkpoint", "m.json", "--input", "val.csv", "--out", "sweep.csv"]);
    ok(dir, &["schedule-dump", "--config", "tiny.toml", "--out", "sched.csv"]);
    [
        "val.csv",
        "val.csv.truth.json",
        first.as_str(),
        "pre.bin",
        "pre.bin.json",
        "mask.csv",
        "m.json",
        "m.bin",
        "m.json.log.jsonl",
        "gen.csv",
        "eval.csv",
        "sweep.csv",
        "sched.csv",
    ]
    .iter()
    .map(|f| dir.join(f))
    .collect()
}


/// `bench` output with the wall-clock columns removed.
pub fn bench_rows(dir: &Path) -> Vec<String> {
    ok(dir, &["bench", "--checkpoint", "m.json", "--input", "val.csv", "--steps", "2,4"])
        .lines()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() < 10 || f[0] == "dataset" {
                return l.to_string();
            }
            [&f[..6], &f[7..9]].concat().join(",")
        })
        .collect()
}
