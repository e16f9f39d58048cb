//! Stage 3: mapper fine-tuning with `w·L_F + α·L_M` against a frozen
//! classifier, one utterance per step.
//!
//! The enhanced frames of a whole utterance go through the same delta and
//! splice maps as real features, so every classifier input row sees enhanced
//! frames `m−9..m+9`. Both maps are linear; their adjoints carry the mimic
//! gradient back to the mapper output.

use log::{debug, info};

use crate::dsp::context::{append_deltas, append_deltas_adjoint, splice, splice_adjoint, SPLICE_CONTEXT};
use crate::error::{Error, LossBreakdown, Result};
use crate::models::{FrozenClassifier, RepresentationTap, SpectralMapper};
use crate::nn::checkpoint::{digest, CheckpointMeta};
use crate::nn::loss::argmax_rows;
use crate::nn::{cross_entropy_loss, mse_loss, LossValue, Matrix, Network, Optimizer};

use super::config::{StageConfig, TargetMode};
use super::dataset::{FeatureCorpus, Side};
use super::report::{joint_value, EpochRecord, LossTerms, StepRecord, TrainReport};
use super::train::{
    base_record, classification_metrics, diverge, evaluate_mapper, fill_divergence, mean, utterance_order,
    EarlyStop, EpochHook, Trained,
};

/// Classifier input built from mapper output: deltas, then ±5 splicing.
pub fn classifier_input(enhanced: &Matrix) -> Matrix {
    splice(&append_deltas(enhanced), SPLICE_CONTEXT)
}

/// Adjoint of [`classifier_input`].
pub fn classifier_input_adjoint(grad: &Matrix) -> Matrix {
    append_deltas_adjoint(&splice_adjoint(grad, SPLICE_CONTEXT))
}

/// What the enhanced-side classifier output is compared against.
#[derive(Debug, Clone, Copy)]
pub enum MimicTarget<'a> {
    /// Tap values of the clean utterance.
    Soft(&'a Matrix),
    /// Frame labels; compared via cross-entropy on the logits.
    Hard(&'a [usize]),
}

#[derive(Debug, Clone)]
pub struct JointTerms {
    pub fidelity: f64,
    pub mimic: f64,
    pub joint: f64,
    /// Gradient of the joint loss w.r.t. the enhanced frames.
    pub grad: Matrix,
    /// Classifier decisions on the enhanced frames.
    pub decisions: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct JointObjective<'a> {
    pub classifier: &'a FrozenClassifier,
    pub tap: RepresentationTap,
    pub target_mode: TargetMode,
    pub alpha: f64,
    pub fidelity_weight: f64,
}

impl<'a> JointObjective<'a> {
    pub fn new(classifier: &'a FrozenClassifier, cfg: &StageConfig) -> Result<Self> {
        let alpha = cfg.alpha();
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be finite and non-negative, got {alpha}")));
        }
        if !(cfg.fidelity_weight >= 0.0 && cfg.fidelity_weight.is_finite()) {
            return Err(Error::invalid("fidelity weight must be finite and non-negative"));
        }
        Ok(JointObjective {
            classifier,
            tap: cfg.tap,
            target_mode: cfg.target_mode,
            alpha,
            fidelity_weight: cfg.fidelity_weight,
        })
    }

    /// The tap the mimic term reads; hard targets always use logits.
    pub fn effective_tap(&self) -> RepresentationTap {
        match self.target_mode {
            TargetMode::Soft => self.tap,
            TargetMode::Hard => RepresentationTap::PreSoftmax,
        }
    }

    /// Clean-side tap values, computed without gradient.
    pub fn clean_tap(&self, clean_spliced: &Matrix) -> Result<Matrix> {
        self.classifier.tap(clean_spliced, self.effective_tap())
    }

    /// Loss terms and the gradient w.r.t. `enhanced` (T × 257).
    pub fn evaluate(&self, enhanced: &Matrix, clean: &Matrix, target: MimicTarget<'_>) -> Result<JointTerms> {
        let fid = mse_loss(enhanced, clean)?;
        let input = classifier_input(enhanced);
        let (out, tape) = self.classifier.tap_with_tape(&input, self.effective_tap())?;
        let mim = match target {
            MimicTarget::Soft(g) => mse_loss(&out, g)?,
            MimicTarget::Hard(labels) => cross_entropy_loss(&out, labels)?,
        };
        let decisions = argmax_rows(&out);
        let joint = joint_value(self.fidelity_weight, fid.value, self.alpha, mim.value);
        let mut grad = fid.grad;
        if self.fidelity_weight != 1.0 {
            grad = grad.map(|g| g * self.fidelity_weight);
        }
        // skipping the mimic branch at α = 0 keeps the update exactly the
        // fidelity-only one even if the mimic gradient is not finite
        if self.alpha != 0.0 {
            let g_out = self.classifier.tap_input_gradient(&tape, &mim.grad)?;
            grad.add_scaled(&classifier_input_adjoint(&g_out), self.alpha)?;
        }
        Ok(JointTerms { fidelity: fid.value, mimic: mim.value, joint, grad, decisions })
    }

    /// The joint objective as a plain loss, for gradient checking.
    pub fn as_loss(&self, enhanced: &Matrix, clean: &Matrix, target: MimicTarget<'_>) -> Result<LossValue> {
        let t = self.evaluate(enhanced, clean, target)?;
        Ok(LossValue { value: t.joint, per_example: vec![t.joint], grad: t.grad })
    }

    fn breakdown(&self, step: usize, fidelity: f64, mimic: f64, joint: f64) -> LossBreakdown {
        LossBreakdown {
            step,
            fidelity,
            mimic,
            joint,
            alpha: self.alpha,
            tap: Some(self.effective_tap().name().to_string()),
        }
    }
}

fn classifier_digest(classifier: &FrozenClassifier) -> Result<String> {
    Ok(digest(&classifier.checkpoint_bytes(&CheckpointMeta::default())?))
}

/// Held-out joint terms, frame-weighted, plus classifier accuracy on the
/// enhanced frames.
struct JointEval {
    fidelity: f64,
    mimic: f64,
    accuracy: Option<f64>,
}

fn evaluate_joint(
    mapper: &SpectralMapper,
    objective: &JointObjective<'_>,
    corpus: &FeatureCorpus,
    clean_taps: &[Option<Matrix>],
) -> Result<Option<JointEval>> {
    let (mut fid, mut mim, mut frames, mut correct, mut labelled) = (0.0, 0.0, 0usize, 0usize, 0usize);
    for &u in &corpus.heldout {
        let utt = &corpus.utterances[u];
        let enhanced = mapper.enhance(&utt.spliced(Side::Noisy))?;
        let target = match (objective.target_mode, &clean_taps[u], &utt.labels) {
            (TargetMode::Soft, Some(g), _) => MimicTarget::Soft(g),
            (TargetMode::Hard, _, Some(l)) => MimicTarget::Hard(l),
            _ => return Err(Error::invalid(format!("utterance {} lacks a mimic target", utt.id))),
        };
        let t = objective.evaluate(&enhanced, &utt.clean, target)?;
        let n = utt.frames() as f64;
        fid += t.fidelity * n;
        mim += t.mimic * n;
        frames += utt.frames();
        if let Some(l) = &utt.labels {
            correct += t.decisions.iter().zip(l).filter(|(a, b)| a == b).count();
            labelled += l.len();
        }
    }
    if frames == 0 {
        return Ok(None);
    }
    Ok(Some(JointEval {
        fidelity: fid / frames as f64,
        mimic: mim / frames as f64,
        accuracy: (labelled > 0).then(|| correct as f64 / labelled as f64),
    }))
}

/// Stage 3. The classifier is borrowed immutably for the whole run; its
/// checkpoint digest is compared before and after as a guard.
pub fn train_joint(
    init: SpectralMapper,
    classifier: &FrozenClassifier,
    corpus: &FeatureCorpus,
    cfg: &StageConfig,
    report: &mut TrainReport,
    hook: &mut EpochHook<'_>,
) -> Result<Trained<SpectralMapper>> {
    let objective = JointObjective::new(classifier, cfg)?;
    if objective.target_mode == TargetMode::Hard && !corpus.has_labels() {
        return Err(Error::invalid("hard targets need frame labels for every utterance"));
    }
    let before = classifier_digest(classifier)?;
    report.classifier_digest_before = Some(before.clone());

    let arch = init.arch;
    let mut net = init.network;
    net.reseed_dropout(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer.clone());

    // the classifier is frozen, so clean-side taps are the same every epoch
    let mut clean_taps: Vec<Option<Matrix>> = vec![None; corpus.utterances.len()];
    if objective.target_mode == TargetMode::Soft {
        for &u in corpus.train.iter().chain(&corpus.heldout) {
            clean_taps[u] = Some(objective.clean_tap(&corpus.utterances[u].spliced(Side::Clean))?);
        }
    }
    let noisy_accuracy = classification_metrics(classifier.network(), corpus, Side::Noisy)?.map(|(_, a)| a);

    let annotate = |rec: &mut EpochRecord| {
        rec.alpha = Some(objective.alpha);
        rec.fidelity_weight = Some(objective.fidelity_weight);
        rec.tap = Some(objective.effective_tap().name().to_string());
        rec.target_mode = Some(match objective.target_mode {
            TargetMode::Soft => "soft".into(),
            TargetMode::Hard => "hard".into(),
        });
        rec.noisy_accuracy = noisy_accuracy;
    };
    let evaluate = |net: &Network, rec: &mut EpochRecord| -> Result<f64> {
        let mapper = SpectralMapper { network: net.clone(), arch };
        let Some(ev) = evaluate_joint(&mapper, &objective, corpus, &clean_taps)? else {
            return Ok(f64::NAN);
        };
        let joint = joint_value(objective.fidelity_weight, ev.fidelity, objective.alpha, ev.mimic);
        rec.heldout = LossTerms { classification: None, fidelity: Some(ev.fidelity), mimic: Some(ev.mimic), joint: Some(joint) };
        rec.heldout_accuracy = ev.accuracy;
        rec.per_snr = evaluate_mapper(&mapper, corpus, &corpus.heldout)?.per_snr;
        Ok(joint)
    };

    let mut rec = base_record(report, 0, 0);
    annotate(&mut rec);
    let loss0 = evaluate(&net, &mut rec)?;
    let mut stop = EarlyStop::new(&net, loss0, cfg.patience);
    rec.best = true;
    hook(&rec, &net)?;
    report.epochs.push(rec);

    let mut steps = 0usize;
    let budget = |steps: usize| cfg.max_steps.is_none_or(|m| steps < m);
    for epoch in 1..=cfg.epochs {
        if !budget(steps) {
            break;
        }
        let (mut fids, mut mims) = (Vec::new(), Vec::new());
        for u in utterance_order(corpus, cfg.seed, epoch) {
            if !budget(steps) {
                break;
            }
            let utt = &corpus.utterances[u];
            let (enhanced, tape) = net.forward(&utt.spliced(Side::Noisy), cfg.train_mode())?;
            let target = match objective.target_mode {
                TargetMode::Soft => MimicTarget::Soft(clean_taps[u].as_ref().expect("precomputed")),
                TargetMode::Hard => MimicTarget::Hard(utt.labels.as_deref().expect("checked")),
            };
            let t = objective.evaluate(&enhanced, &utt.clean, target)?;
            if !t.joint.is_finite() {
                let b = objective.breakdown(steps, t.fidelity, t.mimic, t.joint);
                return Err(diverge(report, epoch, steps, b));
            }
            net.backward(&tape, &t.grad)?;
            if let Err(e) = opt.step(&mut net) {
                return match fill_divergence(e, steps, t.fidelity, t.mimic, objective.alpha) {
                    Error::Diverged(mut b) => {
                        b.joint = t.joint;
                        b.tap = Some(objective.effective_tap().name().to_string());
                        Err(diverge(report, epoch, steps, b))
                    }
                    other => Err(other),
                };
            }
            report.steps.push(StepRecord {
                epoch,
                step: steps,
                loss: LossTerms { classification: None, fidelity: Some(t.fidelity), mimic: Some(t.mimic), joint: Some(t.joint) },
                alpha: Some(objective.alpha),
                fidelity_weight: Some(objective.fidelity_weight),
            });
            debug!("step {steps}: L_F {:.6} L_M {:.6} L_JOINT {:.6}", t.fidelity, t.mimic, t.joint);
            fids.push(t.fidelity);
            mims.push(t.mimic);
            steps += 1;
        }
        let mut rec = base_record(report, epoch, steps);
        annotate(&mut rec);
        if let (Some(f), Some(m)) = (mean(&fids), mean(&mims)) {
            rec.train = LossTerms {
                classification: None,
                fidelity: Some(f),
                mimic: Some(m),
                joint: Some(joint_value(objective.fidelity_weight, f, objective.alpha, m)),
            };
        }
        let loss = evaluate(&net, &mut rec)?;
        rec.best = stop.observe(epoch, loss, &net);
        info!(
            "joint epoch {epoch}: held-out L_F {:.5} L_M {:.5} L_JOINT {loss:.5} acc {:.4}",
            rec.heldout.fidelity.unwrap_or(f64::NAN),
            rec.heldout.mimic.unwrap_or(f64::NAN),
            rec.heldout_accuracy.unwrap_or(f64::NAN)
        );
        hook(&rec, &net)?;
        report.epochs.push(rec);
        if stop.exhausted() {
            debug!("early stop after epoch {epoch}");
            break;
        }
    }

    let after = classifier_digest(classifier)?;
    report.classifier_digest_after = Some(after.clone());
    if after != before {
        return Err(Error::invalid(format!("frozen classifier changed during training: {before} → {after}")));
    }
    report.best_epoch = Some(stop.best_epoch);
    Ok(Trained {
        best: SpectralMapper { network: stop.best_network, arch },
        best_epoch: stop.best_epoch,
        model: SpectralMapper { network: net, arch },
    })
}
