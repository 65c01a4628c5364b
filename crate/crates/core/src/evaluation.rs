//! Loss normalization and aggregate comparison of optimizers.
//!
//! Losses are mapped to log space between the task's `l_best` (0) and
//! `l_init` (1), then clipped to `[0, cap]`. A normalized value of 0.5 means
//! the optimizer closed half of the remaining gap in orders of magnitude.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inner_loop::LearningCurve;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationSpec {
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_cap")]
    pub cap: f64,
}

fn default_delta() -> f64 {
    1e-8
}
fn default_cap() -> f64 {
    2.0
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        NormalizationSpec { delta: default_delta(), cap: default_cap() }
    }
}

impl NormalizationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.delta > 0.0 && self.cap > 1.0 && self.cap.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid normalization {self:?}: need delta > 0, cap > 1")))
        }
    }
}

pub fn normalize(loss: f64, l_init: f64, l_best: f64, spec: &NormalizationSpec) -> f64 {
    if !loss.is_finite() {
        return spec.cap;
    }
    let lo = (l_best + spec.delta).ln();
    let hi = (l_init + spec.delta).ln();
    let denom = hi - lo;
    if !(denom > 0.0) {
        return if loss >= l_init { 1.0 } else { 0.0 };
    }
    (((loss + spec.delta).ln() - lo) / denom).clamp(0.0, spec.cap)
}

/// Pointwise mean of the normalized values of equal-length curves.
pub fn mean_curve(curves: &[LearningCurve]) -> Vec<f64> {
    let Some(first) = curves.first() else {
        return Vec::new();
    };
    let mut mean = vec![0.0; first.normalized.len()];
    for c in curves {
        for (m, v) in mean.iter_mut().zip(&c.normalized) {
            *m += v;
        }
    }
    let n = curves.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSummary {
    pub optimizer_id: String,
    pub mean_curve: Vec<f64>,
    /// Mean over tasks of the per-curve meta-loss.
    pub final_mean_score: f64,
    /// Fraction of tasks on which this optimizer's meta-loss is strictly
    /// lower than tuned Adam's.
    pub beat_tuned_fraction: f64,
}

/// Summarizes each optimizer's curves against the per-task tuned Adam
/// curves. `curves[id][i]` and `tuned[i]` must be runs on the same task.
pub fn compare(
    curves: &BTreeMap<String, Vec<LearningCurve>>,
    tuned: &[LearningCurve],
) -> Result<Vec<OptimizerSummary>> {
    let len = tuned.first().map(|c| c.normalized.len());
    for (id, cs) in curves {
        if cs.len() != tuned.len() {
            return Err(Error::Protocol(format!(
                "{id}: {} curves but {} tuned reference curves",
                cs.len(),
                tuned.len()
            )));
        }
        if cs.iter().chain(tuned).any(|c| Some(c.normalized.len()) != len) {
            return Err(Error::Protocol(format!("{id}: curve lengths differ")));
        }
    }
    let tuned_scores: Vec<f64> = tuned.iter().map(crate::inner_loop::meta_loss).collect();
    Ok(curves
        .iter()
        .map(|(id, cs)| {
            let scores: Vec<f64> = cs.iter().map(crate::inner_loop::meta_loss).collect();
            let n = scores.len().max(1) as f64;
            let beats = scores.iter().zip(&tuned_scores).filter(|(s, t)| s < t).count();
            OptimizerSummary {
                optimizer_id: id.clone(),
                mean_curve: mean_curve(cs),
                final_mean_score: scores.iter().sum::<f64>() / n,
                beat_tuned_fraction: beats as f64 / n,
            }
        })
        .collect())
}
