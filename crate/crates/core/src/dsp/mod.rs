//! Spectral front end: framed STFT log magnitudes, delta augmentation and
//! context splicing.

pub mod archive;
pub mod context;
pub mod features;
pub mod stft;

pub use features::{
    compute_deltas, featurize_utterance, splice, FeatureKind, FeatureSequence, Utterance,
};
pub use stft::{stft_log_magnitude, BINS, FFT_SIZE, FRAME_LEN, HOP, LOG_FLOOR, SAMPLE_RATE};
