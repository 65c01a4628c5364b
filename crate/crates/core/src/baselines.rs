//! Adam and the fixed/tuned learning-rate baselines.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::evaluation::NormalizationSpec;
use crate::inner_loop::{self, LearningCurve, Optimizer};
use crate::learned_opt::OptimizerState;
use crate::tasks::TaskInstance;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        AdamConfig { lr, beta1: default_beta1(), beta2: default_beta2(), eps: default_eps() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok =
            self.lr > 0.0 && (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam config {self:?}")))
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig::new(1e-3)
    }
}

/// One bias-corrected Adam step in place. Uses the `m1`, `v` and `t` slots
/// of `state`.
pub fn adam_step_in_place(state: &mut OptimizerState, x: &mut [f64], grad: &[f64], cfg: &AdamConfig) -> Result<()> {
    check_len(state.len(), x.len())?;
    check_len(state.len(), grad.len())?;
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..x.len() {
        let g = grad[i];
        state.m1[i] = cfg.beta1 * state.m1[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m1[i] / c1;
        let v_hat = state.v[i] / c2;
        x[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

pub fn adam_step(
    state: &OptimizerState,
    x: &[f64],
    grad: &[f64],
    cfg: &AdamConfig,
) -> Result<(Vec<f64>, OptimizerState)> {
    let mut state = state.clone();
    let mut x = x.to_vec();
    adam_step_in_place(&mut state, &mut x, grad, cfg)?;
    Ok((x, state))
}

/// 10^e for e = −6, −5.5, …, 1: fifteen learning rates.
pub fn lr_sweep_grid() -> Vec<f64> {
    (0..15).map(|i| 10f64.powf(-6.0 + 0.5 * i as f64)).collect()
}

/// Mean of the last 10% (at least one) of the per-step losses after the
/// initial one; infinite if the run diverged.
pub fn smoothed_final(curve: &LearningCurve) -> f64 {
    if curve.diverged_at.is_some() {
        return f64::INFINITY;
    }
    let after = &curve.losses[1.min(curve.losses.len() - 1)..];
    let window = after.len().div_ceil(10).max(1);
    let tail = &after[after.len() - window..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    if mean.is_finite() {
        mean
    } else {
        f64::INFINITY
    }
}

pub(crate) struct RawTune {
    pub best_lr: f64,
    pub smoothed_final: f64,
}

/// Grid search over raw (unnormalized) losses. Works on tasks whose
/// normalization constants are not yet known: divergence is then detected
/// against the supplied `l_init`, or non-finite values only if it is NaN.
pub(crate) fn tune_raw(task: &TaskInstance, steps: u64, seed: u64) -> RawTune {
    let l_init = crate::tasks::normalization_l_init(task);
    let norm = NormalizationSpec::default();
    let mut best = RawTune { best_lr: f64::NAN, smoothed_final: f64::INFINITY };
    for lr in lr_sweep_grid() {
        let curve = inner_loop::train_raw(task, l_init, Optimizer::Adam(AdamConfig::new(lr)), steps, seed, &norm);
        let s = smoothed_final(&curve);
        // strict < keeps the smaller lr on ties
        if s < best.smoothed_final || best.best_lr.is_nan() {
            best = RawTune { best_lr: lr, smoothed_final: s };
        }
    }
    best
}

/// Per-task tuned Adam: the grid lr with the lowest smoothed final loss,
/// ties toward the smaller lr.
pub fn tuned_adam(task: &TaskInstance, steps: u64, seed: u64, norm: &NormalizationSpec) -> (f64, LearningCurve) {
    let mut best: Option<(f64, f64, LearningCurve)> = None;
    for lr in lr_sweep_grid() {
        let curve = inner_loop::train(task, Optimizer::Adam(AdamConfig::new(lr)), steps, seed, norm);
        let s = smoothed_final(&curve);
        let better = match &best {
            None => true,
            Some((_, bs, _)) => s < *bs,
        };
        if better {
            best = Some((lr, s, curve));
        }
    }
    let (lr, _, curve) = best.expect("grid is non-empty");
    (lr, curve)
}

/// Mean normalized curve per grid lr over a task set.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub lr: f64,
    pub mean_normalized: Vec<f64>,
    pub score: f64,
}

/// Fixed-lr Adam on every task for each grid lr. `seeds[i]` is the init
/// seed used on `tasks[i]`.
pub fn sweep(tasks: &[TaskInstance], seeds: &[u64], steps: u64, norm: &NormalizationSpec) -> Vec<SweepResult> {
    assert!(!tasks.is_empty(), "sweep needs at least one task");
    assert_eq!(tasks.len(), seeds.len());
    lr_sweep_grid()
        .into_par_iter()
        .map(|lr| {
            let curves: Vec<LearningCurve> = tasks
                .iter()
                .zip(seeds)
                .map(|(t, &s)| inner_loop::train(t, Optimizer::Adam(AdamConfig::new(lr)), steps, s, norm))
                .collect();
            let mean_normalized = crate::evaluation::mean_curve(&curves);
            let score = curves.iter().map(inner_loop::meta_loss).sum::<f64>() / curves.len() as f64;
            SweepResult { lr, mean_normalized, score }
        })
        .collect()
}
