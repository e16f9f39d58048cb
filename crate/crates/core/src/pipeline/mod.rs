//! The three training stages and batch enhancement.

pub mod config;
pub mod dataset;
pub mod enhance;
pub mod joint;
pub mod oracle;
pub mod report;
pub mod train;

pub use config::{BatchNormStats, Batching, Stage, StageConfig, TargetMode};
pub use dataset::{featurize_corpus, FeatureCorpus, FeatureManifest, Side, UtteranceFeatures};
pub use enhance::{enhance, enhance_features, enhance_to_archives};
pub use joint::{classifier_input, train_joint, JointObjective, JointTerms, MimicTarget};
pub use report::{EpochRecord, LossTerms, StepRecord, TrainReport};
pub use train::{evaluate_mapper, pretrain_mapper, train_classifier, EpochHook, MapperEval, Trained};
