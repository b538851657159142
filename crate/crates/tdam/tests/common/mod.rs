#![allow(dead_code)]

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub const TINY_CONFIG: &str = "\
[model]
d_model = 8
n_heads = 2
n_agents = 2
n_landmarks = 4
ssm_state_dim = 2
agent_bias_side = 2
[train]
lr = 1e-3
max_epochs = 8
warmup_epochs = 1
min_epochs_for_stop = 4
patience = 2
";

/// Runs the tool in-process.
pub fn tdam(args: &[&str]) -> i32 {
    tdam::cli::run(std::iter::once("tdam").chain(args.iter().copied()))
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn files(dir: &Path, out: &mut Vec<PathBuf>) {
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files(&p, out);
        } else {
            out.push(p);
        }
    }
}

/// sha256 over every relative path and file content under `dir`.
pub fn tree_hash(dir: &Path) -> String {
    let mut all = Vec::new();
    files(dir, &mut all);
    all.sort();
    let mut h = Sha256::new();
    for p in all {
        h.update(p.strip_prefix(dir).unwrap().to_string_lossy().as_bytes());
        h.update([0]);
        h.update(std::fs::read(&p).unwrap());
        h.update([0]);
    }
    hex::encode(h.finalize())
}

/// CSV rows after the provenance comment, split on commas.
pub fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

/// Full pipeline synth → train → eval → heatmap → stats into `root`.
pub fn pipeline(root: &Path, seed: &str) {
    let cfg = root.join("tiny.cfg");
    std::fs::create_dir_all(root).unwrap();
    std::fs::write(&cfg, TINY_CONFIG).unwrap();
    let (syn, run, ev, hm, st) = (root.join("synth"), root.join("train"), root.join("eval"), root.join("heatmap"), root.join("stats"));
    let j = ["--jobs", "1", "--seed", seed];
    let ok = |args: &[&str]| assert_eq!(tdam(&[args, &j[..]].concat()), 0, "{args:?}");
    ok(&["synth", "--n", "40", "--min-patches", "4", "--max-patches", "9", "--dim", "8", "--out", s(&syn)]);
    let cohort = syn.join("cohort.csv");
    ok(&["train", "--cohort", s(&cohort), "--config", s(&cfg), "--out", s(&run)]);
    ok(&["eval", "--cohort", s(&cohort), "--ckpt", s(&run), "--out", s(&ev)]);
    ok(&["heatmap", "--bag", s(&syn.join("bags/P0001.bag")), "--ckpt", s(&run.join("fold0.ckpt")), "--pgm", "--out", s(&hm)]);
    let risks = run.join("oof_risks.csv");
    for sub in [&["km"][..], &["logrank"], &["rmst", "--tau", "12,36"], &["timeroc", "--horizons", "6,12"], &["cox"]] {
        ok(&[&["stats"], sub, &["--cohort", s(&cohort), "--risks", s(&risks), "--out", s(&st)][..]].concat());
    }
}
