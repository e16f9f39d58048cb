use super::context::{self, SPLICE_CONTEXT};
use super::stft::{self, BINS};
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Layout of a feature sequence; each kind has a fixed per-frame width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// 257 log magnitudes.
    LogMag,
    /// Log magnitudes with deltas and double deltas: 771.
    WithDeltas,
    /// Eleven spliced `WithDeltas` frames: 8481.
    Spliced,
}

impl FeatureKind {
    pub fn dim(self) -> usize {
        match self {
            FeatureKind::LogMag => BINS,
            FeatureKind::WithDeltas => 3 * BINS,
            FeatureKind::Spliced => 3 * BINS * (2 * SPLICE_CONTEXT + 1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::LogMag => "logmag",
            FeatureKind::WithDeltas => "logmag+deltas",
            FeatureKind::Spliced => "spliced",
        }
    }
}

/// `T` frames of one feature kind.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    kind: FeatureKind,
    values: Matrix,
}

impl FeatureSequence {
    pub fn new(kind: FeatureKind, values: Matrix) -> Result<Self> {
        if values.cols() != kind.dim() {
            return Err(Error::shape(format!(
                "{} features need {} columns, got {}",
                kind.name(),
                kind.dim(),
                values.cols()
            )));
        }
        if !values.all_finite() {
            return Err(Error::invalid("feature values must be finite"));
        }
        Ok(FeatureSequence { kind, values })
    }

    pub fn from_vec(kind: FeatureKind, frames: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(kind, Matrix::from_vec(frames, kind.dim(), data)?)
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn into_values(self) -> Matrix {
        self.values
    }

    fn expect(&self, kind: FeatureKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::KindMismatch { expected: kind.name(), got: self.kind.name() });
        }
        Ok(())
    }
}

/// Appends delta and double-delta blocks: 257 → 771.
pub fn compute_deltas(feats: &FeatureSequence) -> Result<FeatureSequence> {
    feats.expect(FeatureKind::LogMag)?;
    FeatureSequence::new(FeatureKind::WithDeltas, context::append_deltas(&feats.values))
}

/// Splices ±`context` frames: 771 → 771·(2·context+1). Only the default
/// context of 5 produces a valid [`FeatureKind::Spliced`] sequence.
pub fn splice(feats: &FeatureSequence, context: usize) -> Result<FeatureSequence> {
    feats.expect(FeatureKind::WithDeltas)?;
    FeatureSequence::new(FeatureKind::Spliced, context::splice(&feats.values, context))
}

/// Mono 16 kHz audio with an identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub samples: Vec<f64>,
}

impl Utterance {
    pub fn new(id: impl Into<String>, samples: Vec<f64>) -> Self {
        Utterance { id: id.into(), samples }
    }

    /// Sample-wise mean of two channels.
    pub fn from_stereo(id: impl Into<String>, left: &[f64], right: &[f64]) -> Result<Self> {
        if left.len() != right.len() {
            return Err(Error::shape("stereo channels differ in length"));
        }
        let samples = left.iter().zip(right).map(|(l, r)| 0.5 * (l + r)).collect();
        Ok(Utterance { id: id.into(), samples })
    }
}

/// Spliced network input and the per-frame log-magnitude targets.
pub fn featurize_utterance(u: &Utterance) -> Result<(FeatureSequence, FeatureSequence)> {
    let logmag = stft::stft_log_magnitude(&u.samples)?;
    let spliced = splice(&compute_deltas(&logmag)?, SPLICE_CONTEXT)?;
    Ok((spliced, logmag))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimensional_chain() {
        assert_eq!(FeatureKind::LogMag.dim(), 257);
        assert_eq!(FeatureKind::WithDeltas.dim(), 771);
        assert_eq!(FeatureKind::Spliced.dim(), 8481);
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let f = FeatureSequence::new(FeatureKind::LogMag, Matrix::zeros(3, 257)).unwrap();
        assert!(matches!(splice(&f, 5), Err(Error::KindMismatch { .. })));
        let d = compute_deltas(&f).unwrap();
        assert!(matches!(compute_deltas(&d), Err(Error::KindMismatch { .. })));
        assert!(FeatureSequence::new(FeatureKind::LogMag, Matrix::zeros(3, 256)).is_err());
    }

    #[test]
    fn constant_sequence_has_zero_deltas() {
        let f = FeatureSequence::new(FeatureKind::LogMag, Matrix::filled(6, 257, -2.5)).unwrap();
        let d = compute_deltas(&f).unwrap();
        for t in 0..6 {
            assert!(d.values().row(t)[257..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_frame_splices_to_eleven_copies() {
        let row: Vec<f64> = (0..771).map(|i| i as f64).collect();
        let f = FeatureSequence::from_vec(FeatureKind::WithDeltas, 1, row.clone()).unwrap();
        let s = splice(&f, 5).unwrap();
        assert_eq!(s.dim(), 8481);
        for k in 0..11 {
            assert_eq!(&s.values().row(0)[k * 771..(k + 1) * 771], row.as_slice());
        }
    }

    #[test]
    fn stereo_is_averaged() {
        let u = Utterance::from_stereo("a", &[1.0, 0.0], &[0.0, -1.0]).unwrap();
        assert_eq!(u.samples, vec![0.5, -0.5]);
    }
}
