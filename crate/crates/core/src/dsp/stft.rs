use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::features::{FeatureKind, FeatureSequence};
use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
/// 25 ms at 16 kHz.
pub const FRAME_LEN: usize = 400;
/// 10 ms at 16 kHz.
pub const HOP: usize = 160;
pub const FFT_SIZE: usize = 512;
pub const BINS: usize = FFT_SIZE / 2 + 1;
pub const LOG_FLOOR: f64 = 1e-10;

/// Symmetric Hamming window.
pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len).map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos()).collect()
}

/// Number of whole frames in `len` samples.
pub fn frame_count(len: usize) -> usize {
    if len < FRAME_LEN {
        0
    } else {
        1 + (len - FRAME_LEN) / HOP
    }
}

/// Log magnitudes of 512-point FFTs over Hamming-windowed 400-sample frames
/// with a 160-sample hop. Magnitudes are floored at [`LOG_FLOOR`].
pub fn stft_log_magnitude(signal: &[f64]) -> Result<FeatureSequence> {
    let frames = frame_count(signal.len());
    if frames == 0 {
        return Err(Error::UtteranceTooShort { samples: signal.len(), needed: FRAME_LEN });
    }
    let window = hamming(FRAME_LEN);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(FFT_SIZE);
    let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut data = Vec::with_capacity(frames * BINS);
    for t in 0..frames {
        let start = t * HOP;
        for (i, b) in buf.iter_mut().enumerate() {
            let v = if i < FRAME_LEN { signal[start + i] * window[i] } else { 0.0 };
            *b = Complex::new(v, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        data.extend(buf[..BINS].iter().map(|c| c.norm().max(LOG_FLOOR).ln()));
    }
    FeatureSequence::from_vec(FeatureKind::LogMag, frames, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_signal_is_rejected() {
        assert!(matches!(
            stft_log_magnitude(&[0.0; 399]),
            Err(Error::UtteranceTooShort { samples: 399, .. })
        ));
        assert_eq!(stft_log_magnitude(&[0.0; 400]).unwrap().frames(), 1);
    }

    #[test]
    fn one_second_gives_98_frames() {
        let s: Vec<f64> = (0..16_000).map(|i| (i as f64 * 0.01).sin()).collect();
        let f = stft_log_magnitude(&s).unwrap();
        assert_eq!((f.frames(), f.dim()), (98, 257));
    }

    #[test]
    fn silence_hits_the_floor() {
        let f = stft_log_magnitude(&[0.0; 8000]).unwrap();
        assert!(f.values().as_slice().iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn hamming_endpoints() {
        let w = hamming(FRAME_LEN);
        assert!((w[0] - 0.08).abs() < 1e-12);
        assert!((w[FRAME_LEN - 1] - 0.08).abs() < 1e-12);
    }
}
