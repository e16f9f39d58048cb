use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// SNR conditions of the generated corpora, in dB.
pub const SNR_CONDITIONS: [f64; 6] = [-6.0, -3.0, 0.0, 3.0, 6.0, 9.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    /// Relative to the manifest directory.
    pub clean: PathBuf,
    pub noisy: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    pub snr_db: f64,
}

/// Parallel noisy/clean corpus listed in a JSON manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelCorpus {
    pub sample_rate: u32,
    pub seed: u64,
    pub entries: Vec<CorpusEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl ParallelCorpus {
    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Loads a manifest; `path` may be the file or its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let mut corpus: ParallelCorpus = serde_json::from_slice(&std::fs::read(&file)?)?;
        corpus.root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(corpus)
    }

    /// Splits entries into (train, held-out), holding out the last
    /// `ceil(fraction · n)` entries of every SNR stratum in manifest order.
    pub fn split(&self, heldout_fraction: f64) -> (Vec<usize>, Vec<usize>) {
        let mut strata: Vec<(f64, Vec<usize>)> = Vec::new();
        for (i, e) in self.entries.iter().enumerate() {
            match strata.iter_mut().find(|(s, _)| *s == e.snr_db) {
                Some((_, v)) => v.push(i),
                None => strata.push((e.snr_db, vec![i])),
            }
        }
        let mut train = Vec::new();
        let mut held = Vec::new();
        for (_, idx) in strata {
            let n_held = ((idx.len() as f64) * heldout_fraction).ceil() as usize;
            let n_held = n_held.min(idx.len().saturating_sub(1));
            let cut = idx.len() - n_held;
            train.extend_from_slice(&idx[..cut]);
            held.extend_from_slice(&idx[cut..]);
        }
        train.sort_unstable();
        held.sort_unstable();
        (train, held)
    }
}
