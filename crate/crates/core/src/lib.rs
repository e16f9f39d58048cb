//! Speech enhancement by spectral mapping, fine-tuned with a mimic loss taken
//! from a frozen senone classifier.
//!
//! Training runs in three stages: a classifier learns frame labels from clean
//! features, a mapper learns noisy → clean log spectra, and the mapper is then
//! refined with `L_F + α·L_M`, where `L_M` compares the frozen classifier's
//! outputs on enhanced and clean speech.

pub mod cli;
pub mod data;
pub mod dsp;
pub mod error;
pub mod models;
pub mod nn;
pub mod par;
pub mod pipeline;

pub use error::{Error, Result};
