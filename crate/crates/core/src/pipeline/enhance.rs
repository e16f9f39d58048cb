use std::path::{Path, PathBuf};

use crate::dsp::context::{append_deltas, splice, SPLICE_CONTEXT};
use crate::dsp::{archive, stft_log_magnitude, FeatureKind, FeatureSequence, Utterance};
use crate::error::Result;
use crate::models::SpectralMapper;
use crate::par::{map_collect, Execution};

/// Enhanced log magnitudes for one noisy log-magnitude sequence.
pub fn enhance_features(mapper: &SpectralMapper, noisy: &FeatureSequence) -> Result<FeatureSequence> {
    if noisy.kind() != FeatureKind::LogMag {
        return Err(crate::Error::KindMismatch { expected: "logmag", got: noisy.kind().name() });
    }
    let spliced = splice(&append_deltas(noisy.values()), SPLICE_CONTEXT);
    FeatureSequence::new(FeatureKind::LogMag, mapper.enhance(&spliced)?)
}

/// Inference-mode enhancement, parallel across utterances.
pub fn enhance(mapper: &SpectralMapper, utterances: &[Utterance]) -> Result<Vec<FeatureSequence>> {
    map_collect(Execution::default(), utterances, |u| enhance_features(mapper, &stft_log_magnitude(&u.samples)?))
        .into_iter()
        .collect()
}

/// Enhances and writes `out_dir/ID.mmfa` per utterance; returns the paths.
pub fn enhance_to_archives(mapper: &SpectralMapper, utterances: &[Utterance], out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let enhanced = enhance(mapper, utterances)?;
    utterances
        .iter()
        .zip(&enhanced)
        .map(|(u, e)| {
            let path = out_dir.join(format!("{}.mmfa", u.id));
            archive::write(&path, e.values())?;
            Ok(path)
        })
        .collect()
}
