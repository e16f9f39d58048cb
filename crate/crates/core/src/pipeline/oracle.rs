//! Finite-difference oracle suite over every layer type, every loss, and the
//! full stage-3 objective on miniature networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::models::{build_classifier_with, build_mapper_with, ClassifierArch, MapperArch, RepresentationTap, SpectralClassifier};
use crate::nn::gradcheck::{gradient_check, GradCheckReport, TOLERANCE};
use crate::nn::layers::LEAKY_SLOPE;
use crate::nn::{
    cross_entropy_loss, mse_loss, Activation, BatchNorm, Dense, Dropout, Layer, Matrix, Mode, Network,
};

use super::config::TargetMode;
use super::joint::{JointObjective, MimicTarget};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCase {
    pub name: &'static str,
    pub draw: usize,
    pub max_rel_error: f64,
    pub checked: usize,
    pub passed: bool,
}

fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

fn dense(i: usize, o: usize, bias: bool, rng: &mut ChaCha8Rng) -> Layer {
    Layer::Dense(Dense::init_uniform(i, o, 6.0, bias, rng))
}

/// Batch-norm with non-trivial affine parameters and running statistics.
fn batch_norm(dim: usize, rng: &mut ChaCha8Rng) -> Layer {
    let mut bn = BatchNorm::new(dim);
    for j in 0..dim {
        bn.gamma[j] = rng.gen_range(0.5..1.5);
        bn.beta[j] = rng.gen_range(-0.5..0.5);
        bn.running_mean[j] = rng.gen_range(-0.5..0.5);
        bn.running_var[j] = rng.gen_range(0.5..2.0);
    }
    Layer::BatchNorm(bn)
}

/// Fresh batch-norm (β = 0, zero running mean) after a bias-free dense layer
/// sends an all-zero row to exactly 0, the ReLU kink; trained layers sit off it.
fn with_random_batch_norm(net: &Network, rng: &mut ChaCha8Rng) -> Network {
    Network::new(
        net.layers()
            .iter()
            .map(|l| match l {
                Layer::BatchNorm(bn) => batch_norm(bn.dim(), rng),
                other => other.clone(),
            })
            .collect(),
    )
}

fn check_mse(net: &Network, x: &Matrix, mode: Mode, rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let out = net.output_dim().expect("non-empty");
    let target = uniform(x.rows(), out, 1.0, rng);
    gradient_check(net, x, mode, &|p: &Matrix| mse_loss(p, &target))
}

/// Runs every case for `draws` seeded draws.
pub fn gradient_suite(draws: usize, seed: u64) -> Result<Vec<OracleCase>> {
    let mut cases = Vec::new();
    for draw in 0..draws {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(draw as u64);
        let i = rng.gen_range(3..7);
        let h = rng.gen_range(3..7);
        let o = rng.gen_range(2..6);
        let b = rng.gen_range(4..8);
        let x = uniform(b, i, 1.0, &mut rng);
        let mut push = |name: &'static str, r: GradCheckReport| {
            cases.push(OracleCase {
                name,
                draw,
                max_rel_error: r.max_rel_error,
                checked: r.checked,
                passed: r.passes(TOLERANCE),
            })
        };

        let net = Network::new(vec![dense(i, o, true, &mut rng)]);
        push("dense+mse", check_mse(&net, &x, Mode::Train, &mut rng)?);

        let net = Network::new(vec![dense(i, h, false, &mut rng), batch_norm(h, &mut rng), dense(h, o, true, &mut rng)]);
        push("batchnorm-train", check_mse(&net, &x, Mode::Train, &mut rng)?);
        push("batchnorm-inference", check_mse(&net, &x, Mode::Inference, &mut rng)?);
        push("batchnorm-frozen-stats", check_mse(&net, &x, Mode::FrozenStats, &mut rng)?);

        let net = Network::new(vec![dense(i, h, true, &mut rng), Layer::Activation(Activation::Relu), dense(h, o, true, &mut rng)]);
        push("relu", check_mse(&net, &x, Mode::Train, &mut rng)?);

        let net = Network::new(vec![
            dense(i, h, true, &mut rng),
            Layer::Activation(Activation::LeakyRelu { slope: LEAKY_SLOPE }),
            dense(h, o, true, &mut rng),
        ]);
        push("leaky-relu", check_mse(&net, &x, Mode::Train, &mut rng)?);

        let net = Network::new(vec![dense(i, o, true, &mut rng), Layer::Activation(Activation::Softmax)]);
        push("softmax", check_mse(&net, &x, Mode::Train, &mut rng)?);

        let mut net = Network::new(vec![
            dense(i, h, true, &mut rng),
            Layer::Dropout(Dropout::new(0.5, 0)?),
            dense(h, o, true, &mut rng),
        ]);
        net.reseed_dropout(rng.gen());
        push("dropout", check_mse(&net, &x, Mode::Train, &mut rng)?);

        let net = Network::new(vec![dense(i, h, false, &mut rng), batch_norm(h, &mut rng), Layer::Activation(Activation::LeakyRelu { slope: LEAKY_SLOPE }), dense(h, o, true, &mut rng)]);
        let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..o)).collect();
        push("cross-entropy", gradient_check(&net, &x, Mode::Train, &|p: &Matrix| cross_entropy_loss(p, &labels))?);

        // stage-3 objective: mapper → deltas → splice → frozen classifier
        let k = rng.gen_range(2..5);
        let frames = rng.gen_range(4..9);
        let mapper = build_mapper_with(MapperArch { input_dim: i, hidden: h, layers: 2, output_dim: k, dropout: 0.5 }, rng.gen())?;
        let mapper_net = with_random_batch_norm(&mapper.network, &mut rng);
        let classes = rng.gen_range(3..6);
        let classifier = build_classifier_with(
            ClassifierArch { input_dim: 33 * k, hidden: rng.gen_range(3..7), layers: 2, classes },
            rng.gen(),
        )?;
        let classifier = SpectralClassifier::from_network(with_random_batch_norm(&classifier.network, &mut rng))?.freeze();
        let noisy = uniform(frames, i, 1.0, &mut rng);
        let clean = uniform(frames, k, 1.0, &mut rng);
        let clean_input = super::joint::classifier_input(&clean);
        let labels: Vec<usize> = (0..frames).map(|_| rng.gen_range(0..classes)).collect();
        for (name, tap, mode, alpha, net_mode) in [
            ("joint-pre-softmax", RepresentationTap::PreSoftmax, TargetMode::Soft, 0.1, Mode::FrozenStats),
            ("joint-post-softmax", RepresentationTap::PostSoftmax, TargetMode::Soft, 1000.0, Mode::FrozenStats),
            ("joint-hard", RepresentationTap::PreSoftmax, TargetMode::Hard, 0.1, Mode::FrozenStats),
            ("joint-batch-stats", RepresentationTap::PreSoftmax, TargetMode::Soft, 0.1, Mode::Train),
        ] {
            let objective = JointObjective { classifier: &classifier, tap, target_mode: mode, alpha, fidelity_weight: 1.0 };
            let soft = objective.clean_tap(&clean_input)?;
            let target = match mode {
                TargetMode::Soft => MimicTarget::Soft(&soft),
                TargetMode::Hard => MimicTarget::Hard(&labels),
            };
            let r = gradient_check(&mapper_net, &noisy, net_mode, &|p: &Matrix| objective.as_loss(p, &clean, target))?;
            push(name, r);
        }
    }
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_a_few_draws() {
        let cases = gradient_suite(3, 11).unwrap();
        assert_eq!(cases.len(), 3 * 13);
        for c in &cases {
            assert!(c.passed, "{} draw {}: {:e}", c.name, c.draw, c.max_rel_error);
        }
    }
}
