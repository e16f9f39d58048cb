//! Per-utterance feature sets and the train/held-out split the stages share.
//!
//! Spliced 8481-wide rows are never stored; they are cut from the 771-wide
//! delta context on demand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::wav::read_wav;
use crate::data::{generate_labels, LabelSequence, ParallelCorpus};
use crate::dsp::context::{append_deltas, splice, splice_rows, SPLICE_CONTEXT};
use crate::dsp::{archive, stft_log_magnitude, FeatureKind, FeatureSequence};
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::par::{map_collect, Execution};

pub const FEATURES_FILE: &str = "features.json";
pub const DEFAULT_HELDOUT_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Noisy,
    Clean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceFeatures {
    pub id: String,
    pub snr_db: f64,
    /// T × 257 log magnitudes.
    pub noisy: Matrix,
    pub clean: Matrix,
    pub labels: Option<Vec<usize>>,
    noisy_ctx: Matrix,
    clean_ctx: Matrix,
}

impl UtteranceFeatures {
    pub fn new(
        id: impl Into<String>,
        snr_db: f64,
        noisy: FeatureSequence,
        clean: FeatureSequence,
        labels: Option<LabelSequence>,
    ) -> Result<Self> {
        let id = id.into();
        for f in [&noisy, &clean] {
            if f.kind() != FeatureKind::LogMag {
                return Err(Error::KindMismatch { expected: "logmag", got: f.kind().name() });
            }
        }
        if noisy.frames() != clean.frames() {
            return Err(Error::shape(format!(
                "utterance {id}: {} noisy frames vs {} clean frames",
                noisy.frames(),
                clean.frames()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != clean.frames() {
                return Err(Error::shape(format!(
                    "utterance {id}: {} labels for {} frames",
                    l.len(),
                    clean.frames()
                )));
            }
        }
        let noisy = noisy.into_values();
        let clean = clean.into_values();
        Ok(UtteranceFeatures {
            id,
            snr_db,
            noisy_ctx: append_deltas(&noisy),
            clean_ctx: append_deltas(&clean),
            noisy,
            clean,
            labels: labels.map(|l| l.labels),
        })
    }

    pub fn frames(&self) -> usize {
        self.clean.rows()
    }

    pub fn logmag(&self, side: Side) -> &Matrix {
        match side {
            Side::Noisy => &self.noisy,
            Side::Clean => &self.clean,
        }
    }

    /// Delta-augmented (T × 771) frames.
    pub fn with_deltas(&self, side: Side) -> &Matrix {
        match side {
            Side::Noisy => &self.noisy_ctx,
            Side::Clean => &self.clean_ctx,
        }
    }

    /// Full T × 8481 network input.
    pub fn spliced(&self, side: Side) -> Matrix {
        splice(self.with_deltas(side), SPLICE_CONTEXT)
    }
}

/// Utterance index and frame index.
pub type FrameRef = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCorpus {
    pub utterances: Vec<UtteranceFeatures>,
    pub train: Vec<usize>,
    pub heldout: Vec<usize>,
    /// Label alphabet size, when labels are present.
    pub classes: Option<usize>,
}

impl FeatureCorpus {
    pub fn new(
        utterances: Vec<UtteranceFeatures>,
        train: Vec<usize>,
        heldout: Vec<usize>,
        classes: Option<usize>,
    ) -> Result<Self> {
        let n = utterances.len();
        if let Some(&bad) = train.iter().chain(&heldout).find(|&&i| i >= n) {
            return Err(Error::invalid(format!("split index {bad} out of range for {n} utterances")));
        }
        if train.is_empty() {
            return Err(Error::invalid("the training split is empty"));
        }
        Ok(FeatureCorpus { utterances, train, heldout, classes })
    }

    pub fn has_labels(&self) -> bool {
        self.utterances.iter().all(|u| u.labels.is_some())
    }

    pub fn frame_refs(&self, subset: &[usize]) -> Vec<FrameRef> {
        subset.iter().flat_map(|&u| (0..self.utterances[u].frames()).map(move |t| (u, t))).collect()
    }

    pub fn frame_count(&self, subset: &[usize]) -> usize {
        subset.iter().map(|&u| self.utterances[u].frames()).sum()
    }

    /// Spliced rows for the given frames, in order.
    pub fn gather_spliced(&self, frames: &[FrameRef], side: Side) -> Matrix {
        let width = FeatureKind::Spliced.dim();
        let mut data = Vec::with_capacity(frames.len() * width);
        for &(u, t) in frames {
            data.extend_from_slice(
                splice_rows(self.utterances[u].with_deltas(side), SPLICE_CONTEXT, &[t]).as_slice(),
            );
        }
        Matrix::from_vec(frames.len(), width, data).expect("spliced width")
    }

    pub fn gather_logmag(&self, frames: &[FrameRef], side: Side) -> Matrix {
        let width = FeatureKind::LogMag.dim();
        let mut data = Vec::with_capacity(frames.len() * width);
        for &(u, t) in frames {
            data.extend_from_slice(self.utterances[u].logmag(side).row(t));
        }
        Matrix::from_vec(frames.len(), width, data).expect("logmag width")
    }

    pub fn gather_labels(&self, frames: &[FrameRef]) -> Result<Vec<usize>> {
        frames
            .iter()
            .map(|&(u, t)| {
                let utt = &self.utterances[u];
                utt.labels
                    .as_ref()
                    .map(|l| l[t])
                    .ok_or_else(|| Error::invalid(format!("utterance {} has no labels", utt.id)))
            })
            .collect()
    }

    /// Featurizes a parallel corpus in memory. Labels come from the manifest
    /// when every entry lists a label file, otherwise from a k-means codebook
    /// of `classes` centroids over the clean frames.
    pub fn from_parallel(corpus: &ParallelCorpus, classes: usize, seed: u64, heldout_fraction: f64) -> Result<Self> {
        let extracted = extract(corpus)?;
        let (labels, classes) = corpus_labels(corpus, &extracted, classes, seed)?;
        let (train, heldout) = corpus.split(heldout_fraction);
        let utterances = extracted
            .into_iter()
            .zip(labels)
            .zip(&corpus.entries)
            .map(|(((noisy, clean), l), e)| UtteranceFeatures::new(e.id.clone(), e.snr_db, noisy, clean, Some(l)))
            .collect::<Result<Vec<_>>>()?;
        FeatureCorpus::new(utterances, train, heldout, Some(classes))
    }

    /// Loads what [`featurize_corpus`] wrote.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(FEATURES_FILE) } else { path.to_path_buf() };
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        let manifest: FeatureManifest = serde_json::from_slice(&std::fs::read(&file)?)?;
        let utterances = manifest
            .entries
            .iter()
            .map(|e| {
                let noisy = FeatureSequence::new(FeatureKind::LogMag, archive::read(&root.join(&e.noisy))?)?;
                let clean = FeatureSequence::new(FeatureKind::LogMag, archive::read(&root.join(&e.clean))?)?;
                let labels = e.labels.as_ref().map(|p| LabelSequence::read(&root.join(p))).transpose()?;
                UtteranceFeatures::new(e.id.clone(), e.snr_db, noisy, clean, labels)
            })
            .collect::<Result<Vec<_>>>()?;
        FeatureCorpus::new(utterances, manifest.train, manifest.heldout, manifest.classes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub id: String,
    pub snr_db: f64,
    pub frames: usize,
    pub noisy: PathBuf,
    pub clean: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
}

/// Index of a featurized corpus directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub classes: Option<usize>,
    pub label_seed: u64,
    pub heldout_fraction: f64,
    pub train: Vec<usize>,
    pub heldout: Vec<usize>,
    pub entries: Vec<FeatureEntry>,
}

type Extracted = Vec<(FeatureSequence, FeatureSequence)>;

fn extract(corpus: &ParallelCorpus) -> Result<Extracted> {
    map_collect(Execution::default(), &corpus.entries, |e| {
        let noisy = read_wav(&corpus.resolve(&e.noisy))?;
        let clean = read_wav(&corpus.resolve(&e.clean))?;
        if noisy.samples.len() != clean.samples.len() {
            return Err(Error::shape(format!(
                "utterance {}: {} noisy samples vs {} clean samples",
                e.id,
                noisy.samples.len(),
                clean.samples.len()
            )));
        }
        Ok((stft_log_magnitude(&noisy.samples)?, stft_log_magnitude(&clean.samples)?))
    })
    .into_iter()
    .collect()
}

fn corpus_labels(
    corpus: &ParallelCorpus,
    extracted: &Extracted,
    classes: usize,
    seed: u64,
) -> Result<(Vec<LabelSequence>, usize)> {
    if !corpus.entries.is_empty() && corpus.entries.iter().all(|e| e.labels.is_some()) {
        let labels = corpus
            .entries
            .iter()
            .map(|e| LabelSequence::read(&corpus.resolve(e.labels.as_ref().expect("checked"))))
            .collect::<Result<Vec<_>>>()?;
        let max = labels.iter().flat_map(|l| l.labels.iter().copied()).max().unwrap_or(0);
        return Ok((labels, classes.max(max + 1)));
    }
    let clean: Vec<FeatureSequence> = extracted.iter().map(|(_, c)| c.clone()).collect();
    let (labels, _) = generate_labels(&clean, classes, seed)?;
    Ok((labels, classes))
}

/// Featurizes a corpus into `out_dir`: `noisy/ID.mmfa`, `clean/ID.mmfa`,
/// `labels/ID.mmlb` and a `features.json` index.
pub fn featurize_corpus(
    corpus: &ParallelCorpus,
    classes: usize,
    seed: u64,
    heldout_fraction: f64,
    out_dir: &Path,
) -> Result<FeatureManifest> {
    let extracted = extract(corpus)?;
    let (labels, classes) = corpus_labels(corpus, &extracted, classes, seed)?;
    for sub in ["noisy", "clean", "labels"] {
        std::fs::create_dir_all(out_dir.join(sub))?;
    }
    let mut entries = Vec::with_capacity(corpus.entries.len());
    for ((e, (noisy, clean)), l) in corpus.entries.iter().zip(&extracted).zip(&labels) {
        let rel = |sub: &str, ext: &str| PathBuf::from(sub).join(format!("{}.{ext}", e.id));
        let entry = FeatureEntry {
            id: e.id.clone(),
            snr_db: e.snr_db,
            frames: clean.frames(),
            noisy: rel("noisy", "mmfa"),
            clean: rel("clean", "mmfa"),
            labels: Some(rel("labels", "mmlb")),
        };
        archive::write(&out_dir.join(&entry.noisy), noisy.values())?;
        archive::write(&out_dir.join(&entry.clean), clean.values())?;
        l.write(&out_dir.join(entry.labels.as_ref().expect("set above")))?;
        entries.push(entry);
    }
    let (train, heldout) = corpus.split(heldout_fraction);
    let manifest =
        FeatureManifest { classes: Some(classes), label_seed: seed, heldout_fraction, train, heldout, entries };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(out_dir.join(FEATURES_FILE), text)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(frames: usize, offset: f64) -> FeatureSequence {
        let data = (0..frames * 257).map(|i| (i as f64 * 0.01).sin() + offset).collect();
        FeatureSequence::from_vec(FeatureKind::LogMag, frames, data).unwrap()
    }

    #[test]
    fn gathered_rows_match_full_splice() {
        let u = UtteranceFeatures::new("a", 0.0, seq(9, 0.5), seq(9, 0.0), None).unwrap();
        let corpus = FeatureCorpus::new(vec![u], vec![0], vec![], None).unwrap();
        let full = corpus.utterances[0].spliced(Side::Noisy);
        let rows = corpus.gather_spliced(&[(0, 7), (0, 0)], Side::Noisy);
        assert_eq!(rows.row(0), full.row(7));
        assert_eq!(rows.row(1), full.row(0));
        assert_eq!(full.cols(), 8481);
    }

    #[test]
    fn label_length_mismatch_names_the_utterance() {
        let labels = LabelSequence { labels: vec![0; 8] };
        let err = UtteranceFeatures::new("utt_7", 0.0, seq(9, 0.5), seq(9, 0.0), Some(labels)).unwrap_err();
        assert!(err.to_string().contains("utt_7"));
    }
}
