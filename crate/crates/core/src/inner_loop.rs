//! Training a task with an optimizer and recording its learning curve.
//!
//! A run's loss at step `s` is the batch loss at the parameters *before* the
//! `s`-th update, on the same batch the gradient is taken from. `train` over
//! `N` steps therefore records `N + 1` losses (the last one at the final
//! parameters), while `advance` by `k` records exactly `k`. Segments of
//! successive `advance` calls concatenate to the loss sequence of a single
//! longer call.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baselines::{adam_step_in_place, AdamConfig};
use crate::evaluation::{normalize, NormalizationSpec};
use crate::learned_opt::{self, LearnedOptParams, OptimizerState};
use crate::rng::{self, purpose};
use crate::tasks::{self, ParamVector, TaskInstance};

/// A loss above this multiple of `l_init` counts as divergence.
pub const DIVERGENCE_RATIO: f64 = 10.0;

#[derive(Clone, Copy, Debug)]
pub enum Optimizer<'a> {
    Learned(&'a LearnedOptParams),
    Adam(AdamConfig),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    /// Raw losses; NaN from the divergence point on.
    pub losses: Vec<f64>,
    pub normalized: Vec<f64>,
    /// Run step at which the run diverged, if it did.
    pub diverged_at: Option<u64>,
}

impl LearningCurve {
    fn with_capacity(n: usize) -> Self {
        LearningCurve { losses: Vec::with_capacity(n), normalized: Vec::with_capacity(n), diverged_at: None }
    }

    pub fn len(&self) -> usize {
        self.normalized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normalized.is_empty()
    }
}

/// State of a persistent training run that can be advanced in truncations.
#[derive(Clone, Debug)]
pub struct InnerRunState {
    pub task: Arc<TaskInstance>,
    pub x: ParamVector,
    pub opt_state: OptimizerState,
    pub step: u64,
    /// Init and batch seed of this run; batch `s` is keyed by `(seed, s)`.
    pub seed: u64,
    pub diverged_at: Option<u64>,
}

impl InnerRunState {
    pub fn new(task: Arc<TaskInstance>, seed: u64) -> Self {
        let x = tasks::init_params(&task, seed);
        let opt_state = OptimizerState::new(task.param_dim);
        InnerRunState { task, x, opt_state, step: 0, seed, diverged_at: None }
    }

    pub fn is_diverged(&self) -> bool {
        self.diverged_at.is_some()
    }
}

fn batch_seed(run_seed: u64, step: u64) -> u64 {
    rng::derive(run_seed, &[purpose::BATCH, step])
}

struct Stepper<'a> {
    task: &'a TaskInstance,
    l_init: f64,
    l_best: f64,
    norm: &'a NormalizationSpec,
    grad: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(task: &'a TaskInstance, l_init: f64, norm: &'a NormalizationSpec) -> Self {
        Stepper { task, l_init, l_best: task.l_best, norm, grad: vec![0.0; task.param_dim] }
    }

    fn push_capped(&self, out: &mut LearningCurve) {
        out.losses.push(f64::NAN);
        out.normalized.push(self.norm.cap);
    }

    fn is_divergent(&self, loss: f64) -> bool {
        !loss.is_finite() || (self.l_init.is_finite() && loss > DIVERGENCE_RATIO * self.l_init)
    }

    /// Records the loss at the current parameters; with `opt`, also applies
    /// one update.
    fn step(&mut self, run: &mut InnerRunState, opt: Option<Optimizer<'_>>, out: &mut LearningCurve) {
        if let Some(at) = run.diverged_at {
            out.diverged_at.get_or_insert(at);
            self.push_capped(out);
            return;
        }
        let batch = batch_seed(run.seed, run.step);
        let loss = match opt {
            Some(_) => tasks::loss_and_gradient_into(self.task, &run.x, batch, &mut self.grad),
            None => tasks::loss(self.task, &run.x, batch),
        }
        .expect("run parameters sized by its task");
        let grad_ok = opt.is_none() || self.grad.iter().all(|g| g.is_finite());
        if self.is_divergent(loss) || !grad_ok {
            run.diverged_at = Some(run.step);
            out.diverged_at.get_or_insert(run.step);
            self.push_capped(out);
            return;
        }
        out.losses.push(loss);
        out.normalized.push(normalize(loss, self.l_init, self.l_best, self.norm));
        match opt {
            None => {}
            Some(Optimizer::Learned(theta)) => {
                learned_opt::step(theta, &mut run.x, &self.grad, &mut run.opt_state).expect("sized")
            }
            Some(Optimizer::Adam(cfg)) => {
                adam_step_in_place(&mut run.opt_state, &mut run.x, &self.grad, &cfg).expect("sized")
            }
        }
        run.step += 1;
    }
}

/// Continues `run` for `k_steps` updates and returns the `k_steps` recorded
/// losses. A diverged run stays frozen and yields capped values.
pub fn advance(
    run: &mut InnerRunState,
    optimizer: Optimizer<'_>,
    k_steps: u64,
    norm: &NormalizationSpec,
) -> LearningCurve {
    let task = Arc::clone(&run.task);
    let mut stepper = Stepper::new(&task, task.l_init, norm);
    let mut out = LearningCurve::with_capacity(k_steps as usize);
    for _ in 0..k_steps {
        stepper.step(run, Some(optimizer), &mut out);
    }
    out
}

/// Fresh run of `steps` updates from `init_params(task, seed)`; `steps + 1`
/// recorded losses.
pub fn train(
    task: &TaskInstance,
    optimizer: Optimizer<'_>,
    steps: u64,
    seed: u64,
    norm: &NormalizationSpec,
) -> LearningCurve {
    train_raw(task, task.l_init, optimizer, steps, seed, norm)
}

/// [`train`] with an explicit divergence reference, for tasks whose
/// normalization constants are still being computed.
pub(crate) fn train_raw(
    task: &TaskInstance,
    l_init: f64,
    optimizer: Optimizer<'_>,
    steps: u64,
    seed: u64,
    norm: &NormalizationSpec,
) -> LearningCurve {
    // The run borrows the task through an Arc; a shallow copy keeps `train`
    // usable on plain references.
    let shared = Arc::new(task.clone());
    let mut run = InnerRunState::new(shared, seed);
    let mut stepper = Stepper::new(task, l_init, norm);
    let mut out = LearningCurve::with_capacity(steps as usize + 1);
    for _ in 0..steps {
        stepper.step(&mut run, Some(optimizer), &mut out);
    }
    stepper.step(&mut run, None, &mut out);
    out
}

/// Mean normalized value of a curve or segment, in `[0, cap]`.
pub fn meta_loss(segment: &LearningCurve) -> f64 {
    assert!(!segment.is_empty(), "meta-loss of an empty segment");
    segment.normalized.iter().sum::<f64>() / segment.normalized.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{sample_task, FamilyId, Payload, TaskFamily};

    fn quad(dim: usize, seed: u64, horizon: u64) -> TaskInstance {
        sample_task(&TaskFamily::new(FamilyId::NoisyQuadratic, dim, dim), seed, horizon)
    }

    #[test]
    fn zero_theta_keeps_loss_at_init_level() {
        let norm = NormalizationSpec::default();
        let task = quad(6, 1, 200);
        let zero = LearnedOptParams::zeros();
        let curve = train(&task, Optimizer::Learned(&zero), 100, 0, &norm);
        assert_eq!(curve.len(), 101);
        assert!(curve.losses.windows(2).all(|w| w[0] == w[1]));
        let mean = meta_loss(&curve);
        assert!((mean - 1.0).abs() < 0.25, "mean {mean}");
    }

    #[test]
    fn adam_solves_small_quadratic() {
        let norm = NormalizationSpec::default();
        let mut task = quad(2, 4, 100);
        let x0 = tasks::init_params(&task, 0);
        let a = vec![1.0, 0.2, 0.2, 3.0];
        let x_star = vec![x0[0] + 0.5, x0[1] - 0.5];
        task.payload = Payload::Quadratic { a: a.clone(), x_star: x_star.clone() };
        let task = task.with_normalization(500);
        let curve = train(&task, Optimizer::Adam(AdamConfig::new(1e-2)), 500, 0, &norm);
        let (first, last) = (curve.losses[0], *curve.losses.last().unwrap());
        assert!(last < 1e-4 * first, "{first} -> {last}");

        // independent reference Adam on the same quadratic
        let (mut x, mut m, mut v) = (x0.0.clone(), [0.0; 2], [0.0; 2]);
        for t in 1..=500 {
            let d = [x[0] - x_star[0], x[1] - x_star[1]];
            let g = [a[0] * d[0] + a[1] * d[1], a[2] * d[0] + a[3] * d[1]];
            for i in 0..2 {
                m[i] = 0.9 * m[i] + 0.1 * g[i];
                v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
                let mh = m[i] / (1.0 - 0.9f64.powi(t));
                let vh = v[i] / (1.0 - 0.999f64.powi(t));
                x[i] -= 1e-2 * mh / (vh.sqrt() + 1e-8);
            }
        }
        let d = [x[0] - x_star[0], x[1] - x_star[1]];
        let reference = 0.5 * (d[0] * (a[0] * d[0] + a[1] * d[1]) + d[1] * (a[2] * d[0] + a[3] * d[1]));
        assert!((reference - last).abs() <= 1e-12 * first.max(1.0), "{reference} vs {last}");
    }

    #[test]
    fn large_lr_adam_diverges_on_ill_conditioned_quadratic() {
        let norm = NormalizationSpec::default();
        let mut task = quad(2, 0, 50);
        task.payload = Payload::Quadratic { a: vec![100.0, 0.0, 0.0, 0.01], x_star: vec![0.0, 0.0] };
        let task = task.with_normalization(50);
        let curve = train(&task, Optimizer::Adam(AdamConfig::new(10.0)), 200, 0, &norm);
        let at = curve.diverged_at.expect("should diverge") as usize;
        assert!(curve.normalized[at..].iter().all(|&v| v == 2.0));
    }

    #[test]
    fn segments_compose() {
        let norm = NormalizationSpec::default();
        let task = Arc::new(quad(5, 2, 100));
        let theta = learned_opt::init_theta(3, 0.5);
        let mut a = InnerRunState::new(Arc::clone(&task), 9);
        let mut b = a.clone();
        let mut s1 = advance(&mut a, Optimizer::Learned(&theta), 200, &norm);
        let s2 = advance(&mut a, Optimizer::Learned(&theta), 300, &norm);
        let whole = advance(&mut b, Optimizer::Learned(&theta), 500, &norm);
        assert_eq!(a.x, b.x);
        assert_eq!(a.opt_state, b.opt_state);
        s1.losses.extend(s2.losses);
        assert_eq!(
            s1.losses.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            whole.losses.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        let full = train(&task, Optimizer::Learned(&theta), 500, 9, &norm);
        assert_eq!(&full.losses[..500], &whole.losses[..]);
    }

    #[test]
    fn zero_step_advance_is_identity() {
        let norm = NormalizationSpec::default();
        let task = Arc::new(quad(3, 2, 100));
        let mut run = InnerRunState::new(task, 1);
        let before = run.clone();
        let seg = advance(&mut run, Optimizer::Adam(AdamConfig::new(0.1)), 0, &norm);
        assert!(seg.is_empty());
        assert_eq!(run.x, before.x);
        assert_eq!(run.step, 0);
    }

    #[test]
    fn diverged_runs_are_absorbing() {
        let norm = NormalizationSpec::default();
        let task = Arc::new(quad(3, 2, 100));
        let mut run = InnerRunState::new(task, 1);
        run.x[0] = f64::NAN;
        let seg = advance(&mut run, Optimizer::Adam(AdamConfig::new(0.1)), 10, &norm);
        assert_eq!(seg.diverged_at, Some(0));
        assert!(seg.normalized.iter().all(|&v| v == 2.0));
        assert_eq!(meta_loss(&seg), 2.0);
        let again = advance(&mut run, Optimizer::Adam(AdamConfig::new(0.1)), 5, &norm);
        assert_eq!(meta_loss(&again), 2.0);
        assert_eq!(run.step, 0);
    }

    #[test]
    fn meta_loss_arithmetic() {
        let seg = |v: Vec<f64>| LearningCurve { losses: v.clone(), normalized: v, diverged_at: None };
        assert_eq!(meta_loss(&seg(vec![1.0; 7])), 1.0);
        assert_eq!(meta_loss(&seg(vec![0.5, 1.5])), 1.0);
        assert_eq!(meta_loss(&seg(vec![2.0; 3])), 2.0);
    }

    #[test]
    fn train_is_deterministic() {
        let norm = NormalizationSpec::default();
        let task = sample_task(&TaskFamily::new(FamilyId::LinearRegression, 4, 8).with_noise(0.1), 5, 100);
        let theta = learned_opt::init_theta(8, 1.0);
        let a = train(&task, Optimizer::Learned(&theta), 100, 3, &norm);
        let b = train(&task, Optimizer::Learned(&theta), 100, 3, &norm);
        assert_eq!(
            a.losses.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.losses.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
