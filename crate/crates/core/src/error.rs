use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Breakdown of the loss terms at the moment training blew up.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub step: usize,
    pub fidelity: f64,
    pub mimic: f64,
    pub joint: f64,
    pub alpha: f64,
    pub tap: Option<String>,
}

impl std::fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "step {}: L_F = {}, L_M = {}, L_JOINT = {}, alpha = {}",
            self.step, self.fidelity, self.mimic, self.joint, self.alpha
        )?;
        if let Some(tap) = &self.tap {
            write!(f, ", tap = {tap}")?;
        }
        Ok(())
    }
}

#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("utterance too short: {samples} samples, need at least {needed}")]
    UtteranceTooShort { samples: usize, needed: usize },
    #[error("feature kind mismatch: expected {expected}, got {got}")]
    KindMismatch { expected: &'static str, got: &'static str },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("degenerate batch: batch-norm in train mode needs at least 2 rows, got {0}")]
    DegenerateBatch(usize),
    #[error("diverged: {0}")]
    Diverged(LossBreakdown),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("bad {format} file {path}: {reason}")]
    Format {
        format: &'static str,
        path: PathBuf,
        reason: String,
    },
    #[error("missing prerequisite for {stage}: {path}")]
    MissingPrerequisite { stage: &'static str, path: PathBuf },
    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Diverged(_))
    }
}
