//! Training reports, written as line-delimited JSON: one record per epoch in
//! `report.jsonl` and one per optimizer step in `steps.jsonl`.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LossBreakdown, Result};

pub const EPOCH_FILE: &str = "report.jsonl";
pub const STEP_FILE: &str = "steps.jsonl";
/// Allowed gap between a logged joint loss and its recomputation.
pub const JOINT_IDENTITY_TOLERANCE: f64 = 1e-9;

/// Loss terms; absent terms do not apply to the stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub classification: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fidelity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mimic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub joint: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrStat {
    pub snr_db: f64,
    pub frames: usize,
    pub enhanced_mse: f64,
    pub noisy_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: String,
    /// Epoch 0 is the evaluation before any update.
    pub epoch: usize,
    pub steps: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fidelity_weight: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tap: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub target_mode: Option<String>,
    pub train: LossTerms,
    pub heldout: LossTerms,
    /// Held-out frame accuracy of the classifier on this stage's features.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub heldout_accuracy: Option<f64>,
    /// Frozen-classifier accuracy on unenhanced noisy features.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub noisy_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub per_snr: Vec<SnrStat>,
    pub best: bool,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    #[serde(flatten)]
    pub loss: LossTerms,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fidelity_weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub step: usize,
    pub fidelity: f64,
    pub mimic: f64,
    pub joint: f64,
    pub alpha: f64,
    pub tap: Option<String>,
}

impl From<&LossBreakdown> for Divergence {
    fn from(b: &LossBreakdown) -> Self {
        Divergence {
            step: b.step,
            fidelity: b.fidelity,
            mimic: b.mimic,
            joint: b.joint,
            alpha: b.alpha,
            tap: b.tap.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: String,
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    pub divergence: Option<Divergence>,
    pub best_epoch: Option<usize>,
    pub classifier_digest_before: Option<String>,
    pub classifier_digest_after: Option<String>,
}

/// `w·L_F + α·L_M`, the joint objective.
pub fn joint_value(fidelity_weight: f64, fidelity: f64, alpha: f64, mimic: f64) -> f64 {
    fidelity_weight * fidelity + alpha * mimic
}

/// A record whose logged joint loss disagrees with its recomputation.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityViolation {
    pub location: String,
    pub logged: f64,
    pub recomputed: f64,
}

fn is_joint_record(w: Option<f64>, alpha: Option<f64>, t: &LossTerms) -> bool {
    w.is_some() && alpha.is_some() && t.fidelity.is_some() && t.mimic.is_some() && t.joint.is_some()
}

fn violation(w: Option<f64>, alpha: Option<f64>, t: &LossTerms, tolerance: f64) -> Option<IdentityViolation> {
    let (Some(w), Some(alpha), Some(f), Some(m), Some(j)) = (w, alpha, t.fidelity, t.mimic, t.joint) else {
        return None;
    };
    let want = joint_value(w, f, alpha, m);
    // NaN compares false, so a non-finite record is always flagged
    if (j - want).abs() <= tolerance {
        None
    } else {
        Some(IdentityViolation { location: String::new(), logged: j, recomputed: want })
    }
}

impl TrainReport {
    pub fn new(stage: &str) -> Self {
        TrainReport { stage: stage.to_string(), ..TrainReport::default() }
    }

    /// Writes `report.jsonl` and `steps.jsonl` into `dir`. A divergence is
    /// appended to the epoch file as a final record.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut epochs = std::io::BufWriter::new(std::fs::File::create(dir.join(EPOCH_FILE))?);
        for e in &self.epochs {
            serde_json::to_writer(&mut epochs, e)?;
            epochs.write_all(b"\n")?;
        }
        if let Some(d) = &self.divergence {
            serde_json::to_writer(&mut epochs, &serde_json::json!({ "divergence": d }))?;
            epochs.write_all(b"\n")?;
        }
        epochs.flush()?;
        let mut steps = std::io::BufWriter::new(std::fs::File::create(dir.join(STEP_FILE))?);
        for s in &self.steps {
            serde_json::to_writer(&mut steps, s)?;
            steps.write_all(b"\n")?;
        }
        steps.flush()?;
        Ok(())
    }

    /// Reads back what [`TrainReport::write`] produced.
    pub fn read(dir: &Path) -> Result<TrainReport> {
        let mut report = TrainReport::default();
        let file = std::io::BufReader::new(std::fs::File::open(dir.join(EPOCH_FILE))?);
        for line in file.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(&line)?;
            if let Some(d) = value.get("divergence") {
                report.divergence = Some(serde_json::from_value(d.clone())?);
            } else {
                let rec: EpochRecord = serde_json::from_value(value)?;
                if rec.best {
                    report.best_epoch = Some(rec.epoch);
                }
                report.stage = rec.stage.clone();
                report.epochs.push(rec);
            }
        }
        let steps_path = dir.join(STEP_FILE);
        if steps_path.exists() {
            let file = std::io::BufReader::new(std::fs::File::open(steps_path)?);
            for line in file.lines() {
                let line = line?;
                if !line.trim().is_empty() {
                    report.steps.push(serde_json::from_str(&line)?);
                }
            }
        }
        Ok(report)
    }

    /// Recomputes `w·L_F + α·L_M` for every record that logs all three terms.
    pub fn joint_identity_violations(&self, tolerance: f64) -> Vec<IdentityViolation> {
        let mut out = Vec::new();
        for s in &self.steps {
            if let Some(v) = violation(s.fidelity_weight, s.alpha, &s.loss, tolerance) {
                out.push(IdentityViolation { location: format!("epoch {} step {}", s.epoch, s.step), ..v });
            }
        }
        for e in &self.epochs {
            for (name, terms) in [("train", &e.train), ("heldout", &e.heldout)] {
                if let Some(v) = violation(e.fidelity_weight, e.alpha, terms, tolerance) {
                    out.push(IdentityViolation { location: format!("epoch {} {name}", e.epoch), ..v });
                }
            }
        }
        out
    }

    /// Number of records carrying all of `L_F`, `L_M`, `L_JOINT` and `α`.
    pub fn checked_records(&self) -> usize {
        let steps = self.steps.iter().filter(|s| is_joint_record(s.fidelity_weight, s.alpha, &s.loss)).count();
        let epochs: usize = self
            .epochs
            .iter()
            .map(|e| {
                [&e.train, &e.heldout]
                    .into_iter()
                    .filter(|t| is_joint_record(e.fidelity_weight, e.alpha, t))
                    .count()
            })
            .sum();
        steps + epochs
    }
}
