//! Seeded pseudo-speech and colored noise for desk-scale corpora.
//!
//! Clean signals are sequences of voiced segments: a few harmonics of a
//! gliding fundamental under a smooth envelope, separated by short pauses,
//! over a faint breath-noise floor. Noise is AR(1)-filtered Gaussian noise
//! with a per-utterance pole, so its spectral tilt varies across the corpus.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::manifest::{CorpusEntry, ParallelCorpus, MANIFEST_FILE, SNR_CONDITIONS};
use super::mix::{measure_snr_db, mix_at_snr, rms, SNR_TOLERANCE_DB};
use super::wav::{snap_to_pcm16, write_wav};
use crate::dsp::SAMPLE_RATE;
use crate::error::{Error, Result};
use crate::par::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub min_seconds: f64,
    pub max_seconds: f64,
    /// RMS level of the clean signal before any clipping guard.
    pub clean_rms: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { min_seconds: 1.0, max_seconds: 1.5, clean_rms: 0.05 }
    }
}

const BREATH_LEVEL: f64 = 0.002;
const PEAK_LIMIT: f64 = 0.99;

fn utterance_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index + 1);
    rng
}

/// Harmonic pseudo-speech of `len` samples.
pub fn pseudo_speech<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let mut out: Vec<f64> =
        (0..len).map(|_| BREATH_LEVEL * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut pos = (rng.gen_range(0.02..0.08) * sr) as usize;
    while pos < len {
        let seg = ((rng.gen_range(0.12..0.32) * sr) as usize).min(len - pos);
        let f0_start = rng.gen_range(80.0..300.0);
        let f0_end = (f0_start * rng.gen_range(0.8..1.2f64)).clamp(80.0, 300.0);
        let harmonics = rng.gen_range(3..=8usize);
        let tilt = rng.gen_range(0.5..1.5);
        let amps: Vec<f64> =
            (1..=harmonics).map(|h| rng.gen_range(0.5..1.0) / (h as f64).powf(tilt)).collect();
        let phases: Vec<f64> = (0..harmonics).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
        let mut phase = 0.0;
        for i in 0..seg {
            let u = i as f64 / seg.max(1) as f64;
            let f0 = f0_start + (f0_end - f0_start) * u;
            phase += 2.0 * PI * f0 / sr;
            let env = (PI * u).sin().powi(2);
            let mut v = 0.0;
            for (h, (a, p)) in amps.iter().zip(&phases).enumerate() {
                v += a * ((h + 1) as f64 * phase + p).sin();
            }
            out[pos + i] += env * v;
        }
        pos += seg + (rng.gen_range(0.02..0.12) * sr) as usize;
    }
    out
}

/// AR(1) colored Gaussian noise.
pub fn colored_noise<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    let pole: f64 = rng.gen_range(-0.6..0.97);
    let mut prev = 0.0;
    (0..len)
        .map(|_| {
            prev = pole * prev + rng.sample::<f64, _>(StandardNormal);
            prev
        })
        .collect()
}

/// One generated clean/noisy pair, already on the 16-bit grid.
#[derive(Debug, Clone)]
pub struct GeneratedPair {
    pub clean: Vec<f64>,
    pub noisy: Vec<f64>,
    pub snr_db: f64,
}

pub fn generate_pair(seed: u64, index: u64, snr: f64, cfg: &SynthConfig) -> Result<GeneratedPair> {
    let mut rng = utterance_rng(seed, index);
    let sr = SAMPLE_RATE as f64;
    let len = (rng.gen_range(cfg.min_seconds..=cfg.max_seconds) * sr) as usize;
    let mut clean = pseudo_speech(len, &mut rng);
    let gain = cfg.clean_rms / rms(&clean);
    clean.iter_mut().for_each(|v| *v *= gain);
    let noise = colored_noise(len + SAMPLE_RATE as usize, &mut rng);
    let mix = mix_at_snr(&clean, &noise, snr, &mut rng)?;
    let mut noisy = mix.noisy;
    let peak = noisy.iter().chain(&clean).fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > PEAK_LIMIT {
        let g = PEAK_LIMIT / peak;
        clean.iter_mut().for_each(|v| *v *= g);
        noisy.iter_mut().for_each(|v| *v *= g);
    }
    snap_to_pcm16(&mut clean);
    snap_to_pcm16(&mut noisy);
    let residual: Vec<f64> = noisy.iter().zip(&clean).map(|(n, c)| n - c).collect();
    let achieved = measure_snr_db(&clean, &residual);
    if (achieved - snr).abs() > SNR_TOLERANCE_DB {
        return Err(Error::invalid(format!(
            "utterance {index}: stored SNR {achieved:.4} dB misses target {snr} dB"
        )));
    }
    Ok(GeneratedPair { clean, noisy, snr_db: snr })
}

/// Stratified SNR assignment: each condition appears `n / 6` or `n / 6 + 1`
/// times, in a seeded order.
pub fn assign_snrs(n: usize, seed: u64) -> Vec<f64> {
    let mut snrs: Vec<f64> = (0..n).map(|i| SNR_CONDITIONS[i % SNR_CONDITIONS.len()]).collect();
    let mut rng = utterance_rng(seed, u64::MAX - 1);
    snrs.shuffle(&mut rng);
    snrs
}

/// Writes `clean/`, `noisy/` and `manifest.json` under `out_dir`.
pub fn generate_synthetic_corpus(
    n_utterances: usize,
    seed: u64,
    out_dir: &Path,
    cfg: &SynthConfig,
) -> Result<ParallelCorpus> {
    if n_utterances == 0 {
        return Err(Error::invalid("corpus needs at least one utterance"));
    }
    if !(cfg.min_seconds > 0.0 && cfg.min_seconds <= cfg.max_seconds) {
        return Err(Error::invalid("bad utterance duration range"));
    }
    std::fs::create_dir_all(out_dir.join("clean"))?;
    std::fs::create_dir_all(out_dir.join("noisy"))?;
    let snrs = assign_snrs(n_utterances, seed);
    let jobs: Vec<(usize, f64)> = snrs.into_iter().enumerate().collect();
    let entries = par::map_collect(Execution::default(), &jobs, |&(i, snr)| -> Result<CorpusEntry> {
        let pair = generate_pair(seed, i as u64, snr, cfg)?;
        let id = format!("utt_{i:05}");
        let clean = PathBuf::from("clean").join(format!("{id}.wav"));
        let noisy = PathBuf::from("noisy").join(format!("{id}.wav"));
        write_wav(&out_dir.join(&clean), &pair.clean)?;
        write_wav(&out_dir.join(&noisy), &pair.noisy)?;
        Ok(CorpusEntry { id, clean, noisy, labels: None, snr_db: snr })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let corpus = ParallelCorpus { sample_rate: SAMPLE_RATE, seed, entries, root: out_dir.to_path_buf() };
    corpus.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(corpus)
}
