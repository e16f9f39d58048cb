use rand::Rng;

use crate::error::{Error, Result};

/// Largest allowed gap between requested and achieved SNR.
pub const SNR_TOLERANCE_DB: f64 = 0.01;

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// `10 log10(P_signal / P_noise)`.
pub fn measure_snr_db(signal: &[f64], noise: &[f64]) -> f64 {
    let ps: f64 = signal.iter().map(|v| v * v).sum();
    let pn: f64 = noise.iter().map(|v| v * v).sum();
    10.0 * (ps / pn).log10()
}

#[derive(Debug, Clone)]
pub struct Mixture {
    pub noisy: Vec<f64>,
    /// The scaled noise actually added.
    pub noise: Vec<f64>,
    pub scale: f64,
    pub offset: usize,
    pub achieved_snr_db: f64,
}

/// Noise gain that puts `noise` at `snr_db` below `clean`.
pub fn noise_scale(clean: &[f64], noise: &[f64], snr_db: f64) -> Result<f64> {
    if !snr_db.is_finite() {
        return Err(Error::invalid(format!("SNR must be finite, got {snr_db}")));
    }
    let (rc, rn) = (rms(clean), rms(noise));
    if rc == 0.0 {
        return Err(Error::invalid("clean signal is silent"));
    }
    if rn == 0.0 {
        return Err(Error::invalid("noise signal is silent"));
    }
    Ok(rc / rn * 10f64.powf(-snr_db / 20.0))
}

/// Crops `noise` at a random offset to the clean length and adds it at the
/// requested SNR.
pub fn mix_at_snr<R: Rng>(clean: &[f64], noise: &[f64], snr_db: f64, rng: &mut R) -> Result<Mixture> {
    if noise.len() < clean.len() {
        return Err(Error::invalid(format!(
            "noise has {} samples, clean needs {}",
            noise.len(),
            clean.len()
        )));
    }
    if !snr_db.is_finite() {
        return Err(Error::invalid(format!("SNR must be finite, got {snr_db}")));
    }
    let offset = rng.gen_range(0..=noise.len() - clean.len());
    let crop = &noise[offset..offset + clean.len()];
    let scale = noise_scale(clean, crop, snr_db)?;
    let scaled: Vec<f64> = crop.iter().map(|n| scale * n).collect();
    let noisy: Vec<f64> = clean.iter().zip(&scaled).map(|(c, n)| c + n).collect();
    let achieved = measure_snr_db(clean, &scaled);
    if (achieved - snr_db).abs() > SNR_TOLERANCE_DB {
        return Err(Error::invalid(format!("achieved SNR {achieved:.4} dB, wanted {snr_db} dB")));
    }
    Ok(Mixture { noisy, noise: scaled, scale, offset, achieved_snr_db: achieved })
}


#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tone(amp_rms: f64, n: usize, freq: f64) -> Vec<f64> {
        let a = amp_rms * 2f64.sqrt();
        (0..n).map(|i| a * (2.0 * std::f64::consts::PI * freq * i as f64 / n as f64).sin()).collect()
    }

    #[test]
    fn equal_power_at_zero_db_has_unit_scale() {
        let c = tone(0.1, 1000, 10.0);
        let n = tone(0.1, 1000, 37.0);
        assert!((noise_scale(&c, &n, 0.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn six_db_with_double_noise_rms() {
        let c = tone(0.1, 1000, 10.0);
        let n = tone(0.2, 1000, 37.0);
        let s = noise_scale(&c, &n, 6.0).unwrap();
        // independent route: pick s so that rms(c) / rms(s n) = 10^(6/20)
        let want = rms(&c) / (rms(&n) * 10f64.powf(6.0 / 20.0));
        assert!((s - want).abs() < 1e-12);
        assert!((s - 0.2506).abs() < 1e-4);
    }

    #[test]
    fn achieved_snr_matches_request() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = tone(0.05, 4000, 31.0);
        let n: Vec<f64> = (0..6000).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        for snr in [-6.0, -3.0, 0.0, 3.0, 6.0, 9.0] {
            let m = mix_at_snr(&c, &n, snr, &mut rng).unwrap();
            let residual: Vec<f64> = m.noisy.iter().zip(&c).map(|(a, b)| a - b).collect();
            assert!((measure_snr_db(&c, &residual) - snr).abs() < SNR_TOLERANCE_DB);
        }
    }

    #[test]
    fn contract_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = tone(0.1, 100, 3.0);
        assert!(mix_at_snr(&c, &c, f64::INFINITY, &mut rng).is_err());
        assert!(mix_at_snr(&c, &[0.0; 100], 0.0, &mut rng).is_err());
        assert!(mix_at_snr(&[0.0; 100], &c, 0.0, &mut rng).is_err());
        assert!(mix_at_snr(&c, &c[..50], 0.0, &mut rng).is_err());
    }
}
