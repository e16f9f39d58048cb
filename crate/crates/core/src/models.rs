//! The spectral mapper and spectral classifier, freezing, and the
//! classifier's representation taps.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::FeatureKind;
use crate::error::{Error, Result};
use crate::nn::checkpoint::{self, CheckpointMeta};
use crate::nn::layers::{softmax_backward, softmax_rows, LEAKY_SLOPE};
use crate::nn::{Activation, BatchNorm, Dense, Dropout, Layer, Matrix, Network, Tape};

const HE_GAIN: f64 = 6.0;
const LINEAR_GAIN: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapperArch {
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub output_dim: usize,
    pub dropout: f64,
}

impl Default for MapperArch {
    fn default() -> Self {
        MapperArch {
            input_dim: FeatureKind::Spliced.dim(),
            hidden: 2048,
            layers: 2,
            output_dim: FeatureKind::LogMag.dim(),
            dropout: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierArch {
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub classes: usize,
}

impl Default for ClassifierArch {
    fn default() -> Self {
        ClassifierArch { input_dim: FeatureKind::Spliced.dim(), hidden: 1024, layers: 6, classes: 1999 }
    }
}

/// Which classifier output feeds the mimic loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepresentationTap {
    PreSoftmax,
    PostSoftmax,
}

impl RepresentationTap {
    /// Mimic-loss weight that balances the two loss terms for this tap.
    pub fn default_alpha(self) -> f64 {
        match self {
            RepresentationTap::PreSoftmax => 0.1,
            RepresentationTap::PostSoftmax => 1000.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RepresentationTap::PreSoftmax => "pre-softmax",
            RepresentationTap::PostSoftmax => "post-softmax",
        }
    }
}

impl std::str::FromStr for RepresentationTap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pre-softmax" => Ok(RepresentationTap::PreSoftmax),
            "post-softmax" => Ok(RepresentationTap::PostSoftmax),
            other => Err(Error::invalid(format!("unknown tap {other:?}"))),
        }
    }
}

/// Model-card sidecar written next to every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub role: String,
    pub dense_shapes: Vec<(usize, usize)>,
    pub num_params: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mapper: Option<MapperArch>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classifier: Option<ClassifierArch>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tap: Option<RepresentationTap>,
    pub frozen: bool,
}

pub fn card_path(checkpoint: &Path) -> std::path::PathBuf {
    checkpoint.with_extension("card.json")
}

fn write_card(path: &Path, card: &ModelCard) -> Result<()> {
    let mut text = serde_json::to_string_pretty(card)?;
    text.push('\n');
    std::fs::write(card_path(path), text)?;
    Ok(())
}

/// Noisy spliced frames → clean log-magnitude frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMapper {
    pub network: Network,
    pub arch: MapperArch,
}

pub fn build_mapper(seed: u64) -> SpectralMapper {
    build_mapper_with(MapperArch::default(), seed).expect("default architecture is valid")
}

/// Dense → batch-norm → ReLU → dropout per hidden layer, then a linear
/// output layer.
pub fn build_mapper_with(arch: MapperArch, seed: u64) -> Result<SpectralMapper> {
    if arch.layers == 0 || arch.hidden == 0 || arch.input_dim == 0 || arch.output_dim == 0 {
        return Err(Error::invalid("mapper dimensions must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut width = arch.input_dim;
    for _ in 0..arch.layers {
        layers.push(Layer::Dense(Dense::init_uniform(width, arch.hidden, HE_GAIN, false, &mut rng)));
        layers.push(Layer::BatchNorm(BatchNorm::new(arch.hidden)));
        layers.push(Layer::Activation(Activation::Relu));
        layers.push(Layer::Dropout(Dropout::new(arch.dropout, 0)?));
        width = arch.hidden;
    }
    layers.push(Layer::Dense(Dense::init_uniform(width, arch.output_dim, LINEAR_GAIN, true, &mut rng)));
    let mut network = Network::new(layers);
    network.reseed_dropout(seed);
    Ok(SpectralMapper { network, arch })
}

impl SpectralMapper {
    pub fn from_network(network: Network) -> Result<Self> {
        let shapes = network.dense_shapes();
        if shapes.len() < 2 {
            return Err(Error::invalid("a mapper needs at least two dense layers"));
        }
        let dropout = network
            .layers()
            .iter()
            .find_map(|l| match l {
                Layer::Dropout(d) => Some(d.rate),
                _ => None,
            })
            .unwrap_or(0.0);
        let arch = MapperArch {
            input_dim: shapes[0].0,
            hidden: shapes[0].1,
            layers: shapes.len() - 1,
            output_dim: shapes[shapes.len() - 1].1,
            dropout,
        };
        Ok(SpectralMapper { network, arch })
    }

    pub fn card(&self) -> ModelCard {
        ModelCard {
            role: "mapper".into(),
            dense_shapes: self.network.dense_shapes(),
            num_params: self.network.num_params(),
            mapper: Some(self.arch),
            classifier: None,
            tap: None,
            frozen: false,
        }
    }

    pub fn save(&self, path: &Path, meta: &CheckpointMeta) -> Result<Vec<u8>> {
        let bytes = checkpoint::save(path, &self.network, meta)?;
        write_card(path, &self.card())?;
        Ok(bytes)
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta)> {
        let (net, meta) = checkpoint::load(path)?;
        Ok((Self::from_network(net)?, meta))
    }

    pub fn checkpoint_bytes(&self, meta: &CheckpointMeta) -> Result<Vec<u8>> {
        checkpoint::encode(&self.network, meta)
    }

    /// Inference-mode enhancement of spliced frames.
    pub fn enhance(&self, spliced: &Matrix) -> Result<Matrix> {
        self.network.predict(spliced)
    }
}

/// Spliced clean frames → senone logits.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralClassifier {
    pub network: Network,
    pub arch: ClassifierArch,
}

pub fn build_classifier(senone_count: usize, seed: u64) -> Result<SpectralClassifier> {
    build_classifier_with(ClassifierArch { classes: senone_count, ..ClassifierArch::default() }, seed)
}

/// Dense → batch-norm → leaky ReLU per hidden layer, then a linear output
/// layer of `classes` logits.
pub fn build_classifier_with(arch: ClassifierArch, seed: u64) -> Result<SpectralClassifier> {
    if arch.classes < 2 {
        return Err(Error::invalid(format!("need at least 2 senone classes, got {}", arch.classes)));
    }
    if arch.layers == 0 || arch.hidden == 0 || arch.input_dim == 0 {
        return Err(Error::invalid("classifier dimensions must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut width = arch.input_dim;
    for _ in 0..arch.layers {
        layers.push(Layer::Dense(Dense::init_uniform(width, arch.hidden, HE_GAIN, false, &mut rng)));
        layers.push(Layer::BatchNorm(BatchNorm::new(arch.hidden)));
        layers.push(Layer::Activation(Activation::LeakyRelu { slope: LEAKY_SLOPE }));
        width = arch.hidden;
    }
    layers.push(Layer::Dense(Dense::init_uniform(width, arch.classes, LINEAR_GAIN, true, &mut rng)));
    Ok(SpectralClassifier { network: Network::new(layers), arch })
}

fn classifier_arch_of(network: &Network) -> Result<ClassifierArch> {
    let shapes = network.dense_shapes();
    if shapes.len() < 2 {
        return Err(Error::invalid("a classifier needs at least two dense layers"));
    }
    Ok(ClassifierArch {
        input_dim: shapes[0].0,
        hidden: shapes[0].1,
        layers: shapes.len() - 1,
        classes: shapes[shapes.len() - 1].1,
    })
}

/// Tape for a tap evaluation; keeps the softmax output when one was applied.
pub struct TapTape {
    tape: Tape,
    posteriors: Option<Matrix>,
}

fn apply_tap(logits: Matrix, tap: RepresentationTap) -> (Matrix, Option<Matrix>) {
    match tap {
        RepresentationTap::PreSoftmax => (logits, None),
        RepresentationTap::PostSoftmax => {
            let p = softmax_rows(&logits);
            (p.clone(), Some(p))
        }
    }
}

impl SpectralClassifier {
    pub fn from_network(network: Network) -> Result<Self> {
        Ok(SpectralClassifier { arch: classifier_arch_of(&network)?, network })
    }

    pub fn card(&self) -> ModelCard {
        ModelCard {
            role: "classifier".into(),
            dense_shapes: self.network.dense_shapes(),
            num_params: self.network.num_params(),
            mapper: None,
            classifier: Some(self.arch),
            tap: None,
            frozen: false,
        }
    }

    pub fn save(&self, path: &Path, meta: &CheckpointMeta) -> Result<Vec<u8>> {
        let bytes = checkpoint::save(path, &self.network, meta)?;
        write_card(path, &self.card())?;
        Ok(bytes)
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta)> {
        let (net, meta) = checkpoint::load(path)?;
        Ok((Self::from_network(net)?, meta))
    }

    /// Inference-mode tap.
    pub fn tap(&self, input: &Matrix, tap: RepresentationTap) -> Result<Matrix> {
        Ok(apply_tap(self.network.predict(input)?, tap).0)
    }

    /// Disables parameter and statistic updates. The frozen classifier only
    /// runs in inference mode but still passes gradients to its input.
    pub fn freeze(self) -> FrozenClassifier {
        FrozenClassifier { network: self.network, arch: self.arch }
    }
}

/// A classifier whose parameters and batch-norm statistics can no longer
/// change. Only `&self` methods are exposed.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenClassifier {
    network: Network,
    arch: ClassifierArch,
}

impl FrozenClassifier {
    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta)> {
        let (c, meta) = SpectralClassifier::load(path)?;
        Ok((c.freeze(), meta))
    }

    pub fn is_frozen(&self) -> bool {
        true
    }

    pub fn arch(&self) -> ClassifierArch {
        self.arch
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn checkpoint_bytes(&self, meta: &CheckpointMeta) -> Result<Vec<u8>> {
        checkpoint::encode(&self.network, meta)
    }

    pub fn card(&self, tap: Option<RepresentationTap>) -> ModelCard {
        ModelCard {
            role: "classifier".into(),
            dense_shapes: self.network.dense_shapes(),
            num_params: self.network.num_params(),
            mapper: None,
            classifier: Some(self.arch),
            tap,
            frozen: true,
        }
    }

    pub fn tap(&self, input: &Matrix, tap: RepresentationTap) -> Result<Matrix> {
        self.check_input(input)?;
        Ok(apply_tap(self.network.predict(input)?, tap).0)
    }

    /// Tap value plus what is needed to differentiate it w.r.t. `input`.
    pub fn tap_with_tape(&self, input: &Matrix, tap: RepresentationTap) -> Result<(Matrix, TapTape)> {
        self.check_input(input)?;
        let (logits, tape) = self.network.forward_inference(input)?;
        let (out, posteriors) = apply_tap(logits, tap);
        Ok((out, TapTape { tape, posteriors }))
    }

    /// Gradient w.r.t. the classifier input of a loss whose gradient w.r.t.
    /// the tap output is `upstream`.
    pub fn tap_input_gradient(&self, tape: &TapTape, upstream: &Matrix) -> Result<Matrix> {
        let g = match &tape.posteriors {
            Some(p) => softmax_backward(p, upstream),
            None => upstream.clone(),
        };
        self.network.input_gradient(&tape.tape, &g)
    }

    fn check_input(&self, input: &Matrix) -> Result<()> {
        if input.cols() != self.arch.input_dim {
            return Err(Error::shape(format!(
                "classifier expects {} input columns, got {}",
                self.arch.input_dim,
                input.cols()
            )));
        }
        Ok(())
    }
}

/// Tap of a frozen classifier; see [`FrozenClassifier::tap`].
pub fn classifier_tap(
    classifier: &FrozenClassifier,
    input: &Matrix,
    tap: RepresentationTap,
) -> Result<Matrix> {
    classifier.tap(input, tap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_classifier() -> FrozenClassifier {
        build_classifier_with(ClassifierArch { input_dim: 6, hidden: 5, layers: 2, classes: 4 }, 3)
            .unwrap()
            .freeze()
    }

    #[test]
    fn default_architectures() {
        let m = build_mapper_with(MapperArch { hidden: 16, ..MapperArch::default() }, 1).unwrap();
        assert_eq!(m.network.dense_shapes(), vec![(8481, 16), (16, 16), (16, 257)]);
        assert!(build_classifier(1, 0).is_err());
    }

    #[test]
    fn tap_alpha_defaults() {
        assert_eq!(RepresentationTap::PreSoftmax.default_alpha(), 0.1);
        assert_eq!(RepresentationTap::PostSoftmax.default_alpha(), 1000.0);
        assert_eq!("post-softmax".parse::<RepresentationTap>().unwrap(), RepresentationTap::PostSoftmax);
        assert!("softmax".parse::<RepresentationTap>().is_err());
    }

    #[test]
    fn post_softmax_is_softmax_of_pre_softmax() {
        let c = toy_classifier();
        let x = Matrix::from_vec(3, 6, (0..18).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let pre = c.tap(&x, RepresentationTap::PreSoftmax).unwrap();
        let post = c.tap(&x, RepresentationTap::PostSoftmax).unwrap();
        let again = softmax_rows(&pre);
        for (a, b) in post.as_slice().iter().zip(again.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        for row in post.iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(c.tap(&Matrix::zeros(1, 5), RepresentationTap::PreSoftmax).is_err());
    }

    #[test]
    fn freezing_keeps_outputs() {
        let c = build_classifier_with(ClassifierArch { input_dim: 6, hidden: 5, layers: 2, classes: 4 }, 3)
            .unwrap();
        let x = Matrix::filled(2, 6, 0.3);
        let before = c.tap(&x, RepresentationTap::PreSoftmax).unwrap();
        let frozen = c.freeze();
        assert!(frozen.is_frozen());
        assert_eq!(frozen.tap(&x, RepresentationTap::PreSoftmax).unwrap(), before);
        assert_eq!(frozen.tap(&x, RepresentationTap::PreSoftmax).unwrap(), before);
    }
}
