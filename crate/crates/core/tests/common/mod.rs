#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::json;

/// Runs the command line in-process and returns its exit code.
pub fn cli(args: &[&str]) -> i32 {
    mimicmap::cli::run(std::iter::once("mimicmap").chain(args.iter().copied()))
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// A run small enough for a few seconds per stage: 12 utterances, two per
/// SNR stratum.
pub fn mini_config() -> serde_json::Value {
    let adam = |lr: f64| json!({"kind": "adam", "lr": lr, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8});
    json!({
        "seed": 3,
        "corpus": {
            "utterances": 12,
            "classes": 6,
            "heldout_fraction": 0.25,
            "synth": {"min_seconds": 0.3, "max_seconds": 0.4, "clean_rms": 0.05}
        },
        "mapper": {"input_dim": 8481, "hidden": 16, "layers": 2, "output_dim": 257, "dropout": 0.2},
        "classifier": {"input_dim": 8481, "hidden": 16, "layers": 2, "classes": 6},
        "train_classifier": {"epochs": 2, "batch_size": 64, "optimizer": adam(1e-3)},
        "pretrain_mapper": {"epochs": 2, "batch_size": 64, "optimizer": adam(1e-3)},
        "train_joint": {"epochs": 1, "optimizer": adam(1e-4)}
    })
}

pub fn write_config(dir: &Path, name: &str, value: &serde_json::Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_vec_pretty(value).unwrap()).unwrap();
    path
}

/// Directories of one full pipeline run under a common root.
pub struct Run {
    pub root: PathBuf,
    pub config: PathBuf,
}

impl Run {
    pub fn new(root: &Path, config: PathBuf) -> Self {
        Run { root: root.to_path_buf(), config }
    }

    pub fn dir(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// `cli` with `--config` and `--out <root>/<out>` added.
    pub fn step(&self, out: &str, args: &[&str]) -> i32 {
        let out = self.dir(out);
        let mut full: Vec<&str> = vec!["--config", s(&self.config), "--out", s(&out)];
        full.extend_from_slice(args);
        cli(&full)
    }

    /// gen-data, featurize, train-classifier, pretrain-mapper, train-joint,
    /// enhance and report; panics on the first non-zero exit.
    pub fn full_pipeline(&self) {
        let corpus = self.dir("corpus");
        let feats = self.dir("feats");
        let classifier = self.dir("cls").join("classifier.mmck");
        let mapper = self.dir("map").join("mapper.mmck");
        let joint = self.dir("joint").join("mapper.mmck");
        let steps: Vec<(&str, Vec<&str>)> = vec![
            ("corpus", vec!["gen-data"]),
            ("feats", vec!["featurize", "--corpus", s(&corpus)]),
            ("cls", vec!["train-classifier", "--features", s(&feats)]),
            ("map", vec!["pretrain-mapper", "--features", s(&feats)]),
            ("joint", vec!["train-joint", "--features", s(&feats), "--classifier", s(&classifier), "--mapper", s(&mapper)]),
            ("enh", vec!["enhance", "--mapper", s(&joint), "--corpus", s(&corpus)]),
        ];
        for (out, args) in steps {
            assert_eq!(self.step(out, &args), 0, "{} failed", args[0]);
        }
        assert_eq!(cli(&["report", s(&self.dir("joint"))]), 0, "report failed");
    }
}

/// Every file under `dir`, keyed by relative path.
pub fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

pub fn read_jsonl(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Epoch records of a report, skipping any divergence line.
pub fn epochs(run: &Path) -> Vec<serde_json::Value> {
    read_jsonl(&run.join("report.jsonl")).into_iter().filter(|r| r.get("epoch").is_some()).collect()
}
