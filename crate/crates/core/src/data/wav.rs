use std::path::Path;

use hound::{SampleFormat, WavSpec};

use crate::dsp::{Utterance, SAMPLE_RATE};
use crate::error::{Error, Result};

const FULL_SCALE: f64 = 32768.0;

/// Rounds to the nearest 16-bit PCM level, clamping at full scale.
pub fn quantize(x: f64) -> i16 {
    (x * FULL_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

pub fn dequantize(q: i16) -> f64 {
    q as f64 / FULL_SCALE
}

/// Snaps samples onto the 16-bit grid so that a write/read round trip is exact.
pub fn snap_to_pcm16(samples: &mut [f64]) {
    for s in samples {
        *s = dequantize(quantize(*s));
    }
}

/// Reads 16-bit PCM at 16 kHz; stereo is averaged to mono.
pub fn read_wav(path: &Path) -> Result<Utterance> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let fail = |reason: String| Error::Format { format: "wav", path: path.to_path_buf(), reason };
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(fail(format!("need 16-bit PCM, got {:?} {} bit", spec.sample_format, spec.bits_per_sample)));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(fail(format!("need {SAMPLE_RATE} Hz, got {}", spec.sample_rate)));
    }
    let raw: Vec<i16> = reader.samples::<i16>().collect::<std::result::Result<_, _>>()?;
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match spec.channels {
        1 => Ok(Utterance::new(id, raw.into_iter().map(dequantize).collect())),
        2 => {
            let left: Vec<f64> = raw.iter().step_by(2).map(|&q| dequantize(q)).collect();
            let right: Vec<f64> = raw.iter().skip(1).step_by(2).map(|&q| dequantize(q)).collect();
            Utterance::from_stereo(id, &left, &right)
        }
        n => Err(fail(format!("unsupported channel count {n}"))),
    }
}

/// Writes mono 16-bit PCM at 16 kHz.
pub fn write_wav(path: &Path, samples: &[f64]) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        writer.write_sample(quantize(s))?;
    }
    writer.finalize()?;
    Ok(())
}
