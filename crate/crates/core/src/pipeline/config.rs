use serde::{Deserialize, Serialize};

use crate::models::RepresentationTap;
use crate::nn::{Mode, OptimizerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    TrainClassifier,
    PretrainMapper,
    TrainJoint,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::TrainClassifier => "train_classifier",
            Stage::PretrainMapper => "pretrain_mapper",
            Stage::TrainJoint => "train_joint",
        }
    }
}

/// What the mapper output is compared against through the frozen classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Mimic loss against the classifier's outputs on clean speech.
    Soft,
    /// Cross-entropy against the frame labels.
    Hard,
}

impl std::str::FromStr for TargetMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "soft" => Ok(TargetMode::Soft),
            "hard" => Ok(TargetMode::Hard),
            other => Err(crate::Error::invalid(format!("unknown target mode {other:?}"))),
        }
    }
}

/// How frames are grouped into optimizer steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Batching {
    /// Shuffled frames from the whole training set, `batch_size` per step.
    Frames,
    /// One whole utterance per step, utterances in shuffled order.
    Utterances,
}

/// Which statistics batch-norm layers normalize with during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchNormStats {
    /// Statistics of the current batch; running estimates are updated.
    Batch,
    /// Running estimates from earlier training, left unchanged.
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageConfig {
    pub stage: Stage,
    /// `None` resolves to the tap's default weight.
    pub alpha: Option<f64>,
    pub tap: RepresentationTap,
    pub target_mode: TargetMode,
    /// Weight on the fidelity term; 0 gives mimic-only training.
    pub fidelity_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub batching: Batching,
    pub batch_norm: BatchNormStats,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    /// Stop after this many epochs without held-out improvement.
    pub patience: Option<usize>,
    /// Hard cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            stage: Stage::PretrainMapper,
            alpha: None,
            tap: RepresentationTap::PreSoftmax,
            target_mode: TargetMode::Soft,
            fidelity_weight: 1.0,
            epochs: 10,
            batch_size: 256,
            batching: Batching::Frames,
            batch_norm: BatchNormStats::Batch,
            seed: 0,
            optimizer: OptimizerConfig::default(),
            patience: Some(5),
            max_steps: None,
        }
    }
}

impl StageConfig {
    /// Stage defaults. Fine-tuning steps on single utterances, whose
    /// statistics are far narrower than those of shuffled frame batches, so
    /// it keeps the mapper's batch-norm statistics from pre-training.
    pub fn for_stage(stage: Stage) -> Self {
        match stage {
            Stage::TrainJoint => StageConfig {
                stage,
                batching: Batching::Utterances,
                batch_norm: BatchNormStats::Frozen,
                ..StageConfig::default()
            },
            _ => StageConfig { stage, ..StageConfig::default() },
        }
    }

    /// Forward mode for training steps.
    pub fn train_mode(&self) -> Mode {
        match self.batch_norm {
            BatchNormStats::Batch => Mode::Train,
            BatchNormStats::Frozen => Mode::FrozenStats,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or_else(|| self.tap.default_alpha())
    }
}
