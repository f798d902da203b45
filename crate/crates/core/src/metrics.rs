//! Step accuracy, forgetting, prediction bias and the per-run report.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::{MethodPreset, TrainConfig};

pub const REPORT_FORMAT: &str = "ffcil-run-report v1";

/// Metrics recorded after step `step` (0-based) on the test set of every
/// class seen so far. Confusion rows are true classes, columns predictions,
/// both in arrival order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub classes_seen: usize,
    pub accuracy: f64,
    /// Accuracy on each step's class group, for steps `0..=step`.
    pub task_accuracies: Vec<f64>,
    pub task_sizes: Vec<usize>,
    pub confusion: Vec<Vec<usize>>,
    /// Scale applied to the new head rows by alignment (1 when inactive).
    pub alignment_scale: f64,
    /// Mean objective value over the step's final epoch.
    pub final_epoch_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForgettingVariant {
    /// Best accuracy over history minus final accuracy.
    #[default]
    MaxOverHistory,
    /// Accuracy right after learning minus final accuracy.
    FirstSeen,
}

/// Average forgetting over the first `T - 1` tasks. `acc[t][j]` is the
/// accuracy on task `j` after step `t` (`j <= t`).
pub fn average_forgetting(acc: &[Vec<f64>], variant: ForgettingVariant) -> Result<f64> {
    let t_final = acc.len();
    if t_final < 2 {
        return Err(Error::TooFewSteps(t_final));
    }
    for (t, row) in acc.iter().enumerate() {
        if row.len() < t + 1 {
            return Err(Error::InvalidArgument(format!(
                "accuracy row {t} has {} entries, need {}",
                row.len(),
                t + 1
            )));
        }
    }
    let last = &acc[t_final - 1];
    let total: f64 = (0..t_final - 1)
        .map(|j| {
            let reference = match variant {
                ForgettingVariant::MaxOverHistory => {
                    (j..t_final - 1).map(|t| acc[t][j]).fold(f64::NEG_INFINITY, f64::max)
                }
                ForgettingVariant::FirstSeen => acc[j][j],
            };
            reference - last[j]
        })
        .sum();
    Ok(total / (t_final - 1) as f64)
}

pub fn accuracy_from_confusion(confusion: &[Vec<usize>]) -> f64 {
    let total: usize = confusion.iter().flatten().sum();
    let correct: usize = confusion.iter().enumerate().map(|(i, r)| r[i]).sum();
    correct as f64 / total as f64
}

/// Mean of the step accuracies. Sensitive to how classes are split into
/// steps, so it is reported but not used as a headline number.
pub fn mean_step_accuracy(steps: &[StepMetrics]) -> f64 {
    steps.iter().map(|s| s.accuracy).sum::<f64>() / steps.len() as f64
}

/// Fraction of all predictions that land in each step's class group.
/// `counts` are the per-step class counts in arrival order.
pub fn prediction_bias(confusion: &[Vec<usize>], counts: &[usize]) -> Result<Vec<f64>> {
    let classes: usize = counts.iter().sum();
    if confusion.len() != classes || confusion.iter().any(|r| r.len() != classes) {
        return Err(Error::InvalidArgument(format!(
            "confusion matrix must be {classes} x {classes}"
        )));
    }
    let predicted: Vec<usize> = (0..classes).map(|c| confusion.iter().map(|r| r[c]).sum()).collect();
    let total: usize = predicted.iter().sum();
    if total == 0 {
        return Err(Error::InvalidArgument("confusion matrix is empty".into()));
    }
    let mut start = 0;
    Ok(counts
        .iter()
        .map(|&n| {
            let mass: usize = predicted[start..start + n].iter().sum();
            start += n;
            mass as f64 / total as f64
        })
        .collect())
}

/// Everything one run produced, plus enough configuration to re-run it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    /// Full effective experiment config text, when run through the harness.
    pub config: Option<String>,
    pub protocol: String,
    pub seed: u64,
    pub schedule_kind: String,
    pub schedule: String,
    pub counts: Vec<usize>,
    pub method: MethodPreset,
    pub train: TrainConfig,
    pub steps: Vec<StepMetrics>,
    pub final_accuracy: f64,
    pub forgetting: Option<f64>,
    pub forgetting_first_seen: Option<f64>,
    pub mean_step_accuracy: f64,
    pub prediction_bias: Vec<f64>,
    /// Wall-clock milliseconds per step. Kept out of the serialized report
    /// so that reports are byte-identical across repeated runs.
    #[serde(skip)]
    pub wall_ms: Vec<f64>,
}

impl RunReport {
    pub fn task_accuracy_matrix(&self) -> Vec<Vec<f64>> {
        self.steps.iter().map(|s| s.task_accuracies.clone()).collect()
    }

    pub fn total_wall_ms(&self) -> f64 {
        self.wall_ms.iter().sum()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })
    }
}
