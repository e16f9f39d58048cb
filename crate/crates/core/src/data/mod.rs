//! Corpus handling: WAV I/O, SNR-controlled mixing, synthetic corpora, frame
//! labels and deterministic batching.

pub mod batcher;
pub mod labels;
pub mod manifest;
pub mod mix;
pub mod synth;
pub mod wav;

pub use labels::{generate_labels, Codebook, LabelSequence};
pub use manifest::{CorpusEntry, ParallelCorpus, SNR_CONDITIONS};
pub use mix::mix_at_snr;
pub use synth::{generate_synthetic_corpus, SynthConfig};
