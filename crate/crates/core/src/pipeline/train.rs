//! Stage 1 (classifier) and stage 2 (mapper pre-training), plus the epoch
//! bookkeeping all stages share.

use log::{debug, info};

use crate::data::batcher::{batches, permutation};
use crate::error::{Error, LossBreakdown, Result};
use crate::models::{SpectralClassifier, SpectralMapper};
use crate::nn::loss::argmax_rows;
use crate::nn::{cross_entropy_loss, mse_loss, Matrix, Mode, Network, Optimizer};

use super::config::{Batching, StageConfig};
use super::dataset::{FeatureCorpus, FrameRef, Side};
use super::report::{Divergence, EpochRecord, LossTerms, SnrStat, StepRecord, TrainReport};

/// Called after every epoch record (including epoch 0) with the network at
/// that point; used to write per-epoch checkpoints.
pub type EpochHook<'a> = dyn FnMut(&EpochRecord, &Network) -> Result<()> + 'a;

/// Final and best-held-out models of a run.
#[derive(Debug, Clone)]
pub struct Trained<M> {
    pub model: M,
    pub best: M,
    pub best_epoch: usize,
}

/// Tracks the best held-out loss and the patience counter.
pub(crate) struct EarlyStop {
    best_loss: f64,
    pub best_epoch: usize,
    pub best_network: Network,
    stale: usize,
    patience: Option<usize>,
}

impl EarlyStop {
    pub fn new(initial: &Network, loss: f64, patience: Option<usize>) -> Self {
        EarlyStop { best_loss: loss, best_epoch: 0, best_network: initial.clone(), stale: 0, patience }
    }

    /// Returns whether `epoch` is a new best.
    pub fn observe(&mut self, epoch: usize, loss: f64, net: &Network) -> bool {
        // strict improvement only, so ties keep the earlier model
        if loss < self.best_loss || (self.best_loss.is_nan() && loss.is_finite()) {
            self.best_loss = loss;
            self.best_epoch = epoch;
            self.best_network = net.clone();
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn exhausted(&self) -> bool {
        self.patience.is_some_and(|p| self.stale >= p)
    }
}

pub(crate) fn base_record(report: &TrainReport, epoch: usize, steps: usize) -> EpochRecord {
    EpochRecord {
        stage: report.stage.clone(),
        epoch,
        steps,
        alpha: None,
        fidelity_weight: None,
        tap: None,
        target_mode: None,
        train: LossTerms::default(),
        heldout: LossTerms::default(),
        heldout_accuracy: None,
        noisy_accuracy: None,
        per_snr: Vec::new(),
        best: false,
        diverged: false,
    }
}

pub(crate) fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Records a divergence and turns it into the error the caller returns.
pub(crate) fn diverge(report: &mut TrainReport, epoch: usize, steps: usize, breakdown: LossBreakdown) -> Error {
    let mut rec = base_record(report, epoch, steps);
    rec.diverged = true;
    rec.alpha = Some(breakdown.alpha).filter(|a| !a.is_nan());
    rec.tap = breakdown.tap.clone();
    report.epochs.push(rec);
    report.divergence = Some(Divergence::from(&breakdown));
    Error::Diverged(breakdown)
}

fn frame_batches(corpus: &FeatureCorpus, cfg: &StageConfig, epoch: usize) -> Vec<Vec<FrameRef>> {
    let frames = corpus.frame_refs(&corpus.train);
    batches(frames.len(), cfg.batch_size, cfg.seed, epoch as u64)
        .into_iter()
        .map(|b| b.into_iter().map(|i| frames[i]).collect::<Vec<_>>())
        // a lone frame cannot be batch-normalized with batch statistics
        .filter(|b| b.len() >= 2 || cfg.train_mode() != Mode::Train)
        .collect()
}

/// Utterance order for one epoch of per-utterance training.
pub fn utterance_order(corpus: &FeatureCorpus, seed: u64, epoch: usize) -> Vec<usize> {
    permutation(corpus.train.len(), seed, epoch as u64).into_iter().map(|i| corpus.train[i]).collect()
}

fn step_budget_left(cfg: &StageConfig, steps: usize) -> bool {
    cfg.max_steps.is_none_or(|m| steps < m)
}

/// Held-out cross-entropy and frame accuracy of `net` on `side` features.
pub fn classification_metrics(net: &Network, corpus: &FeatureCorpus, side: Side) -> Result<Option<(f64, f64)>> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut frames = 0usize;
    for &u in &corpus.heldout {
        let utt = &corpus.utterances[u];
        let Some(labels) = &utt.labels else { continue };
        let logits = net.predict(&utt.spliced(side))?;
        let ce = cross_entropy_loss(&logits, labels)?;
        loss += ce.per_example.iter().sum::<f64>();
        correct += argmax_rows(&logits).iter().zip(labels).filter(|(a, b)| a == b).count();
        frames += labels.len();
    }
    if frames == 0 {
        return Ok(None);
    }
    Ok(Some((loss / frames as f64, correct as f64 / frames as f64)))
}

/// Stage 1: cross-entropy on clean spliced frames.
pub fn train_classifier(
    init: SpectralClassifier,
    corpus: &FeatureCorpus,
    cfg: &StageConfig,
    report: &mut TrainReport,
    hook: &mut EpochHook<'_>,
) -> Result<Trained<SpectralClassifier>> {
    if !corpus.has_labels() {
        return Err(Error::invalid("classifier training needs frame labels for every utterance"));
    }
    let mut net = init.network;
    let arch = init.arch;
    let mut opt = Optimizer::new(cfg.optimizer.clone());

    let evaluate = |net: &Network, rec: &mut EpochRecord| -> Result<f64> {
        if let Some((loss, acc)) = classification_metrics(net, corpus, Side::Clean)? {
            rec.heldout.classification = Some(loss);
            rec.heldout_accuracy = Some(acc);
            Ok(loss)
        } else {
            Ok(f64::NAN)
        }
    };

    let mut rec = base_record(report, 0, 0);
    let loss0 = evaluate(&net, &mut rec)?;
    let mut stop = EarlyStop::new(&net, loss0, cfg.patience);
    rec.best = true;
    hook(&rec, &net)?;
    report.epochs.push(rec);

    let mut steps = 0usize;
    for epoch in 1..=cfg.epochs {
        if !step_budget_left(cfg, steps) {
            break;
        }
        let mut losses = Vec::new();
        for batch in frame_batches(corpus, cfg, epoch) {
            if !step_budget_left(cfg, steps) {
                break;
            }
            let x = corpus.gather_spliced(&batch, Side::Clean);
            let labels = corpus.gather_labels(&batch)?;
            let (logits, tape) = net.forward(&x, cfg.train_mode())?;
            let ce = cross_entropy_loss(&logits, &labels)?;
            // the classification loss is reported in the joint slot
            let blown = |step| LossBreakdown { joint: ce.value, ..breakdown(step, f64::NAN, f64::NAN, f64::NAN) };
            if !ce.value.is_finite() {
                return Err(diverge(report, epoch, steps, blown(steps)));
            }
            net.backward(&tape, &ce.grad)?;
            match opt.step(&mut net) {
                Ok(()) => {}
                Err(Error::Diverged(_)) => return Err(diverge(report, epoch, steps, blown(steps))),
                Err(e) => return Err(e),
            }
            report.steps.push(StepRecord {
                epoch,
                step: steps,
                loss: LossTerms { classification: Some(ce.value), ..LossTerms::default() },
                alpha: None,
                fidelity_weight: None,
            });
            losses.push(ce.value);
            steps += 1;
        }
        let mut rec = base_record(report, epoch, steps);
        rec.train.classification = mean(&losses);
        let loss = evaluate(&net, &mut rec)?;
        rec.best = stop.observe(epoch, loss, &net);
        info!(
            "classifier epoch {epoch}: train {:.5} held-out {:.5} acc {:.4}",
            rec.train.classification.unwrap_or(f64::NAN),
            loss,
            rec.heldout_accuracy.unwrap_or(f64::NAN)
        );
        hook(&rec, &net)?;
        report.epochs.push(rec);
        if stop.exhausted() {
            debug!("early stop after epoch {epoch}");
            break;
        }
    }
    report.best_epoch = Some(stop.best_epoch);
    Ok(Trained {
        best: SpectralClassifier { network: stop.best_network, arch },
        best_epoch: stop.best_epoch,
        model: SpectralClassifier { network: net, arch },
    })
}

fn breakdown(step: usize, fidelity: f64, mimic: f64, alpha: f64) -> LossBreakdown {
    LossBreakdown { step, fidelity, mimic, joint: f64::NAN, alpha, tap: None }
}

/// Replaces the placeholder losses of an optimizer divergence.
pub(crate) fn fill_divergence(e: Error, step: usize, fidelity: f64, mimic: f64, alpha: f64) -> Error {
    match e {
        Error::Diverged(mut b) => {
            b.step = step;
            b.fidelity = fidelity;
            b.mimic = mimic;
            b.alpha = alpha;
            Error::Diverged(b)
        }
        other => other,
    }
}

/// Held-out fidelity of the mapper and of the unenhanced input, overall
/// (frame-weighted) and per SNR stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct MapperEval {
    pub enhanced_mse: f64,
    pub noisy_mse: f64,
    pub per_snr: Vec<SnrStat>,
}

pub fn evaluate_mapper(mapper: &SpectralMapper, corpus: &FeatureCorpus, subset: &[usize]) -> Result<MapperEval> {
    let mut per_snr: Vec<SnrStat> = Vec::new();
    for &u in subset {
        let utt = &corpus.utterances[u];
        let enhanced = mapper.enhance(&utt.spliced(Side::Noisy))?;
        let e = mse_loss(&enhanced, &utt.clean)?.per_example.iter().sum::<f64>();
        let n = mse_loss(&utt.noisy, &utt.clean)?.per_example.iter().sum::<f64>();
        let stat = match per_snr.iter_mut().find(|s| s.snr_db == utt.snr_db) {
            Some(s) => s,
            None => {
                per_snr.push(SnrStat { snr_db: utt.snr_db, frames: 0, enhanced_mse: 0.0, noisy_mse: 0.0 });
                per_snr.last_mut().expect("just pushed")
            }
        };
        stat.frames += utt.frames();
        stat.enhanced_mse += e;
        stat.noisy_mse += n;
    }
    let frames: usize = per_snr.iter().map(|s| s.frames).sum();
    let (mut e, mut n) = (0.0, 0.0);
    for s in &mut per_snr {
        e += s.enhanced_mse;
        n += s.noisy_mse;
        s.enhanced_mse /= s.frames as f64;
        s.noisy_mse /= s.frames as f64;
    }
    per_snr.sort_by(|a, b| a.snr_db.total_cmp(&b.snr_db));
    let f = frames.max(1) as f64;
    Ok(MapperEval { enhanced_mse: e / f, noisy_mse: n / f, per_snr })
}

/// One fidelity-only step on a batch; returns the loss.
pub(crate) fn fidelity_step(
    net: &mut Network,
    opt: &mut Optimizer,
    x: &Matrix,
    target: &Matrix,
    mode: Mode,
    step: usize,
) -> Result<f64> {
    let (y, tape) = net.forward(x, mode)?;
    let fid = mse_loss(&y, target)?;
    if !fid.value.is_finite() {
        return Err(Error::Diverged(breakdown(step, fid.value, f64::NAN, f64::NAN)));
    }
    net.backward(&tape, &fid.grad)?;
    opt.step(net).map_err(|e| fill_divergence(e, step, fid.value, f64::NAN, f64::NAN))?;
    Ok(fid.value)
}

/// Stage 2: fidelity MSE from noisy spliced frames to clean log
/// magnitudes.
pub fn pretrain_mapper(
    init: SpectralMapper,
    corpus: &FeatureCorpus,
    cfg: &StageConfig,
    report: &mut TrainReport,
    hook: &mut EpochHook<'_>,
) -> Result<Trained<SpectralMapper>> {
    let arch = init.arch;
    let mut net = init.network;
    net.reseed_dropout(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer.clone());

    let evaluate = |net: &Network, rec: &mut EpochRecord| -> Result<f64> {
        if corpus.heldout.is_empty() {
            return Ok(f64::NAN);
        }
        let m = SpectralMapper { network: net.clone(), arch };
        let ev = evaluate_mapper(&m, corpus, &corpus.heldout)?;
        rec.heldout.fidelity = Some(ev.enhanced_mse);
        rec.per_snr = ev.per_snr;
        Ok(ev.enhanced_mse)
    };

    let mut rec = base_record(report, 0, 0);
    let loss0 = evaluate(&net, &mut rec)?;
    let mut stop = EarlyStop::new(&net, loss0, cfg.patience);
    rec.best = true;
    hook(&rec, &net)?;
    report.epochs.push(rec);

    let mut steps = 0usize;
    for epoch in 1..=cfg.epochs {
        if !step_budget_left(cfg, steps) {
            break;
        }
        let mut losses = Vec::new();
        let units: Vec<Vec<FrameRef>> = match cfg.batching {
            Batching::Frames => frame_batches(corpus, cfg, epoch),
            Batching::Utterances => utterance_order(corpus, cfg.seed, epoch)
                .into_iter()
                .map(|u| corpus.frame_refs(&[u]))
                .collect(),
        };
        for batch in units {
            if !step_budget_left(cfg, steps) {
                break;
            }
            let (x, y) = match cfg.batching {
                Batching::Frames => (corpus.gather_spliced(&batch, Side::Noisy), corpus.gather_logmag(&batch, Side::Clean)),
                Batching::Utterances => {
                    let utt = &corpus.utterances[batch[0].0];
                    (utt.spliced(Side::Noisy), utt.clean.clone())
                }
            };
            let loss = match fidelity_step(&mut net, &mut opt, &x, &y, cfg.train_mode(), steps) {
                Ok(l) => l,
                Err(Error::Diverged(b)) => return Err(diverge(report, epoch, steps, b)),
                Err(e) => return Err(e),
            };
            report.steps.push(StepRecord {
                epoch,
                step: steps,
                loss: LossTerms { fidelity: Some(loss), ..LossTerms::default() },
                alpha: None,
                fidelity_weight: None,
            });
            losses.push(loss);
            steps += 1;
        }
        let mut rec = base_record(report, epoch, steps);
        rec.train.fidelity = mean(&losses);
        let loss = evaluate(&net, &mut rec)?;
        rec.best = stop.observe(epoch, loss, &net);
        info!("mapper epoch {epoch}: train {:.5} held-out {loss:.5}", rec.train.fidelity.unwrap_or(f64::NAN));
        hook(&rec, &net)?;
        report.epochs.push(rec);
        if stop.exhausted() {
            debug!("early stop after epoch {epoch}");
            break;
        }
    }
    report.best_epoch = Some(stop.best_epoch);
    Ok(Trained {
        best: SpectralMapper { network: stop.best_network, arch },
        best_epoch: stop.best_epoch,
        model: SpectralMapper { network: net, arch },
    })
}
