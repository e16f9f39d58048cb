//! Frame labels from a k-means codebook over clean log-magnitude frames, and
//! the `MMLB` label file format (magic, frame count `u32`, then `u32` ids,
//! little-endian).

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{FeatureKind, FeatureSequence};
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::par::{self, Execution};

pub const MAGIC: &[u8; 4] = b"MMLB";
pub const KMEANS_ITERATIONS: usize = 25;

/// One class id per feature frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSequence {
    pub labels: Vec<usize>,
}

impl LabelSequence {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.labels.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.labels.len() as u32).to_le_bytes());
        for &l in &self.labels {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], origin: &Path) -> Result<Self> {
        let fail = |reason: &str| Error::Format {
            format: "label",
            path: origin.to_path_buf(),
            reason: reason.into(),
        };
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(fail("bad magic or truncated header"));
        }
        let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if bytes.len() - 8 != 4 * n {
            return Err(fail("frame count does not match body"));
        }
        let labels =
            bytes[8..].chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize).collect();
        Ok(LabelSequence { labels })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?, path)
    }
}

/// Trained centroids plus the mean squared quantization error after every
/// assignment step.
#[derive(Debug, Clone)]
pub struct Codebook {
    pub centroids: Matrix,
    pub distortion_history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &Matrix, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter_rows().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn distinct_rows(frames: &Matrix, limit: usize) -> usize {
    let mut seen = HashSet::new();
    for row in frames.iter_rows() {
        seen.insert(row.iter().map(|v| v.to_bits()).collect::<Vec<u64>>());
        if seen.len() >= limit {
            break;
        }
    }
    seen.len()
}

impl Codebook {
    /// k-means++ seeding followed by Lloyd iterations. Empty clusters keep
    /// their previous centroid.
    pub fn train(frames: &Matrix, k: usize, seed: u64, iterations: usize) -> Result<Codebook> {
        if k == 0 {
            return Err(Error::invalid("need at least one class"));
        }
        let distinct = distinct_rows(frames, k);
        if k > distinct {
            return Err(Error::invalid(format!("{k} classes but only {distinct} distinct frames")));
        }
        let exec = Execution::default();
        let n = frames.rows();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen = vec![rng.gen_range(0..n)];
        let mut d2: Vec<f64> = frames.iter_rows().map(|r| sq_dist(r, frames.row(chosen[0]))).collect();
        while chosen.len() < k {
            let total: f64 = d2.iter().sum();
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            if d2[pick] == 0.0 {
                pick = d2.iter().position(|&d| d > 0.0).expect("enough distinct frames");
            }
            chosen.push(pick);
            let c = frames.row(pick).to_vec();
            for (i, row) in frames.iter_rows().enumerate() {
                d2[i] = d2[i].min(sq_dist(row, &c));
            }
        }
        let mut centroids = frames.select_rows(&chosen);
        let rows: Vec<usize> = (0..n).collect();
        let mut history = Vec::new();
        let mut prev_assign: Option<Vec<usize>> = None;
        for _ in 0..iterations.max(1) {
            let assigned = par::map_collect(exec, &rows, |&i| nearest(&centroids, frames.row(i)));
            history.push(assigned.iter().map(|a| a.1).sum::<f64>() / n as f64);
            let assign: Vec<usize> = assigned.iter().map(|a| a.0).collect();
            if prev_assign.as_ref() == Some(&assign) {
                break;
            }
            let mut sums = Matrix::zeros(k, frames.cols());
            let mut counts = vec![0usize; k];
            for (i, &c) in assign.iter().enumerate() {
                counts[c] += 1;
                for (s, v) in sums.row_mut(c).iter_mut().zip(frames.row(i)) {
                    *s += v;
                }
            }
            for c in 0..k {
                if counts[c] > 0 {
                    let inv = 1.0 / counts[c] as f64;
                    for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                        *dst = s * inv;
                    }
                }
            }
            prev_assign = Some(assign);
        }
        Ok(Codebook { centroids, distortion_history: history })
    }

    pub fn classes(&self) -> usize {
        self.centroids.rows()
    }

    pub fn assign(&self, frames: &Matrix) -> Vec<usize> {
        frames.iter_rows().map(|r| nearest(&self.centroids, r).0).collect()
    }
}

/// Trains a codebook over all clean frames and labels every utterance with
/// nearest-centroid ids.
pub fn generate_labels(
    clean: &[FeatureSequence],
    n_classes: usize,
    seed: u64,
) -> Result<(Vec<LabelSequence>, Codebook)> {
    for f in clean {
        if f.kind() != FeatureKind::LogMag {
            return Err(Error::KindMismatch { expected: "logmag", got: f.kind().name() });
        }
    }
    let parts: Vec<&Matrix> = clean.iter().map(FeatureSequence::values).collect();
    let all = Matrix::vstack(&parts)?;
    if all.rows() == 0 {
        return Err(Error::invalid("no frames to label"));
    }
    let codebook = Codebook::train(&all, n_classes, seed, KMEANS_ITERATIONS)?;
    let labels = clean.iter().map(|f| LabelSequence { labels: codebook.assign(f.values()) }).collect();
    Ok((labels, codebook))
}
