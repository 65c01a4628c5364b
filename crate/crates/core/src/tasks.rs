//! The distribution of target problems the learned optimizers are trained on.
//!
//! Four closed-form families with exact gradients: a noisy quadratic bowl,
//! linear regression, logistic regression and a tiny tanh MLP on a two-moons
//! dataset. Every instance is a pure function of `(family, seed)` and carries
//! the per-task normalization constants used to put learning curves of very
//! different problems on a common scale.

use std::ops::{Deref, DerefMut};

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::baselines;
use crate::error::{check_len, Error, Result};
use crate::rng::{self, purpose};

/// Number of init seeds averaged for `l_init`.
pub const L_INIT_SEEDS: u64 = 8;

const MLP_IN: usize = 2;
const MLP_HIDDEN: usize = 16;
const MLP_OUT: usize = 2;
const MLP_PARAMS: usize = MLP_IN * MLP_HIDDEN + MLP_HIDDEN + MLP_HIDDEN * MLP_OUT + MLP_OUT;
const MOONS_POINTS: usize = 256;
const MOONS_ANGULAR_NOISE: f64 = 0.1;

/// A flat real vector: target-model parameters, gradients, or optimizer
/// weights. A vector with any non-finite entry counts as diverged.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(n: usize) -> Self {
        ParamVector(vec![0.0; n])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn is_diverged(&self) -> bool {
        !self.is_finite()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FamilyId {
    NoisyQuadratic,
    LinearRegression,
    LogisticRegression,
    TinyMlpClassification,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskFamily {
    pub id: FamilyId,
    /// Inclusive parameter-dimension range. Ignored by the MLP family, whose
    /// dimension is fixed by its architecture.
    pub dim_min: usize,
    pub dim_max: usize,
    #[serde(default)]
    pub noise_scale: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

fn default_batch_size() -> usize {
    32
}

impl TaskFamily {
    pub fn new(id: FamilyId, dim_min: usize, dim_max: usize) -> Self {
        TaskFamily { id, dim_min, dim_max, noise_scale: 0.0, batch_size: default_batch_size() }
    }

    pub fn with_noise(mut self, noise_scale: f64) -> Self {
        self.noise_scale = noise_scale;
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim_min < 1 || self.dim_max < self.dim_min {
            return Err(Error::Config(format!(
                "{:?}: dim range [{}, {}] must satisfy 1 <= min <= max",
                self.id, self.dim_min, self.dim_max
            )));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Config(format!("{:?}: noise_scale must be >= 0", self.id)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config(format!("{:?}: batch_size must be positive", self.id)));
        }
        Ok(())
    }
}

/// Family-specific constants of a realized task.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    /// `A` is stored row-major, `dim × dim`.
    Quadratic {
        a: Vec<f64>,
        x_star: Vec<f64>,
    },
    /// Features are independent normals with per-coordinate std `feature_std`.
    Regression {
        w_star: Vec<f64>,
        feature_std: Vec<f64>,
    },
    Logistic {
        w_star: Vec<f64>,
        feature_std: Vec<f64>,
    },
    /// Two interleaved half circles; labels are 0 or 1.
    TinyMlp {
        points: Vec<[f64; 2]>,
        labels: Vec<u8>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskInstance {
    pub family: TaskFamily,
    pub seed: u64,
    pub param_dim: usize,
    pub payload: Payload,
    /// Horizon the normalization constants were computed for.
    pub norm_horizon: u64,
    pub l_init: f64,
    pub l_best: f64,
}

/// Samples a task and computes its normalization constants over
/// `norm_horizon` steps of per-task tuned Adam.
pub fn sample_task(family: &TaskFamily, seed: u64, norm_horizon: u64) -> TaskInstance {
    sample_problem(family, seed).with_normalization(norm_horizon)
}

impl TaskInstance {
    /// Recomputes `l_init`/`l_best` for the current payload.
    pub fn with_normalization(mut self, norm_horizon: u64) -> Self {
        let (l_init, l_best) = normalization_constants(&self, norm_horizon);
        self.norm_horizon = norm_horizon;
        self.l_init = l_init;
        self.l_best = l_best;
        self
    }
}

/// The problem alone, without normalization constants (`l_init`/`l_best`
/// are NaN). Cheap; useful where only the loss surface matters.
pub fn sample_problem(family: &TaskFamily, seed: u64) -> TaskInstance {
    let mut rng = rng::stream(seed, &[purpose::TASK_PAYLOAD]);
    let dim = match family.id {
        FamilyId::TinyMlpClassification => MLP_PARAMS,
        _ => rng.random_range(family.dim_min..=family.dim_max),
    };
    let payload = match family.id {
        FamilyId::NoisyQuadratic => {
            // A = BᵀB + εI with row scales log-uniform in [1e-2, 1e1].
            let mut b = vec![0.0; dim * dim];
            let inv_sqrt = 1.0 / (dim as f64).sqrt();
            for i in 0..dim {
                let scale = 10f64.powf(rng.random_range(-2.0..=1.0));
                for j in 0..dim {
                    let z: f64 = rng.sample(StandardNormal);
                    b[i * dim + j] = scale * z * inv_sqrt;
                }
            }
            let eps = 1e-3 * dim as f64;
            let mut a = vec![0.0; dim * dim];
            for r in 0..dim {
                for c in r..dim {
                    let s: f64 = (0..dim).map(|k| b[k * dim + r] * b[k * dim + c]).sum();
                    a[r * dim + c] = s;
                    a[c * dim + r] = s;
                }
                a[r * dim + r] += eps;
            }
            let x_star = normals(&mut rng, dim);
            Payload::Quadratic { a, x_star }
        }
        FamilyId::LinearRegression | FamilyId::LogisticRegression => {
            let w_star = normals(&mut rng, dim);
            let feature_std = (0..dim).map(|_| 10f64.powf(rng.random_range(-1.0..=0.5))).collect();
            if family.id == FamilyId::LinearRegression {
                Payload::Regression { w_star, feature_std }
            } else {
                Payload::Logistic { w_star, feature_std }
            }
        }
        FamilyId::TinyMlpClassification => {
            let mut points = Vec::with_capacity(MOONS_POINTS);
            let mut labels = Vec::with_capacity(MOONS_POINTS);
            for i in 0..MOONS_POINTS {
                let label = (i % 2) as u8;
                let z: f64 = rng.sample(StandardNormal);
                let angle = rng.random_range(0.0..std::f64::consts::PI) + MOONS_ANGULAR_NOISE * z;
                let p = if label == 0 { [angle.cos(), angle.sin()] } else { [1.0 - angle.cos(), 0.5 - angle.sin()] };
                points.push(p);
                labels.push(label);
            }
            Payload::TinyMlp { points, labels }
        }
    };
    TaskInstance {
        family: family.clone(),
        seed,
        param_dim: dim,
        payload,
        norm_horizon: 0,
        l_init: f64::NAN,
        l_best: f64::NAN,
    }
}

fn normals(rng: &mut rng::Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Parameter initialization: N(0, 1) for the convex families; for the MLP,
/// weights are N(0, 1/fan_in) and biases zero.
pub fn init_params(task: &TaskInstance, seed: u64) -> ParamVector {
    let mut rng = rng::stream(task.seed, &[purpose::PARAM_INIT, seed]);
    match task.payload {
        Payload::TinyMlp { .. } => {
            let mut p = vec![0.0; MLP_PARAMS];
            let l = MlpLayout::new();
            let s1 = 1.0 / (MLP_IN as f64).sqrt();
            let s2 = 1.0 / (MLP_HIDDEN as f64).sqrt();
            for w in &mut p[l.w1..l.b1] {
                *w = s1 * rng.sample::<f64, _>(StandardNormal);
            }
            for w in &mut p[l.w2..l.b2] {
                *w = s2 * rng.sample::<f64, _>(StandardNormal);
            }
            ParamVector(p)
        }
        _ => ParamVector(normals(&mut rng, task.param_dim)),
    }
}

/// Batch loss. Always `>= 0`.
pub fn loss(task: &TaskInstance, params: &[f64], batch_seed: u64) -> Result<f64> {
    check_len(task.param_dim, params.len())?;
    Ok(eval(task, params, batch_seed, None))
}

/// Exact gradient of the batch loss; for the noisy quadratic, plus Gaussian
/// noise of std `noise_scale` drawn from `batch_seed`.
pub fn gradient(task: &TaskInstance, params: &[f64], batch_seed: u64) -> Result<ParamVector> {
    let mut grad = ParamVector::zeros(task.param_dim);
    loss_and_gradient_into(task, params, batch_seed, &mut grad)?;
    Ok(grad)
}

/// Loss and gradient of the same batch, writing the gradient into `grad`.
pub fn loss_and_gradient_into(task: &TaskInstance, params: &[f64], batch_seed: u64, grad: &mut [f64]) -> Result<f64> {
    check_len(task.param_dim, params.len())?;
    check_len(task.param_dim, grad.len())?;
    Ok(eval(task, params, batch_seed, Some(grad)))
}

fn eval(task: &TaskInstance, x: &[f64], batch_seed: u64, grad: Option<&mut [f64]>) -> f64 {
    let dim = task.param_dim;
    match &task.payload {
        Payload::Quadratic { a, x_star } => {
            let diff: Vec<f64> = x.iter().zip(x_star).map(|(xi, si)| xi - si).collect();
            let mut loss = 0.0;
            let mut ad = vec![0.0; dim];
            for r in 0..dim {
                let row = &a[r * dim..(r + 1) * dim];
                ad[r] = row.iter().zip(&diff).map(|(aij, dj)| aij * dj).sum();
                loss += diff[r] * ad[r];
            }
            if let Some(g) = grad {
                g.copy_from_slice(&ad);
                let noise = task.family.noise_scale;
                if noise > 0.0 {
                    let mut rng = rng::stream(task.seed, &[purpose::GRAD_NOISE, batch_seed]);
                    for gi in g.iter_mut() {
                        *gi += noise * rng.sample::<f64, _>(StandardNormal);
                    }
                }
            }
            (0.5 * loss).max(0.0)
        }
        Payload::Regression { w_star, feature_std } | Payload::Logistic { w_star, feature_std } => {
            let logistic = matches!(task.payload, Payload::Logistic { .. });
            let n = task.family.batch_size;
            let noise = task.family.noise_scale;
            let mut rng = rng::stream(task.seed, &[purpose::BATCH, batch_seed]);
            let mut z = vec![0.0; dim];
            let mut total = 0.0;
            let mut g = grad;
            if let Some(g) = g.as_deref_mut() {
                g.fill(0.0);
            }
            for _ in 0..n {
                for (zi, s) in z.iter_mut().zip(feature_std) {
                    *zi = s * rng.sample::<f64, _>(StandardNormal);
                }
                let target = dot(w_star, &z) + noise * rng.sample::<f64, _>(StandardNormal);
                let pred = dot(x, &z);
                let (l, dl) = if logistic {
                    let y = if rng.random::<f64>() < sigmoid(target) { 1.0 } else { 0.0 };
                    (softplus(pred) - y * pred, sigmoid(pred) - y)
                } else {
                    let r = pred - target;
                    (0.5 * r * r, r)
                };
                total += l;
                if let Some(g) = g.as_deref_mut() {
                    for (gi, zi) in g.iter_mut().zip(&z) {
                        *gi += dl * zi;
                    }
                }
            }
            let inv = 1.0 / n as f64;
            if let Some(g) = g {
                g.iter_mut().for_each(|gi| *gi *= inv);
            }
            (total * inv).max(0.0)
        }
        Payload::TinyMlp { points, labels } => {
            mlp_loss(x, points, labels, task.family.batch_size, task.seed, batch_seed, grad)
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

struct MlpLayout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

impl MlpLayout {
    const fn new() -> Self {
        let w1 = 0;
        let b1 = w1 + MLP_IN * MLP_HIDDEN;
        let w2 = b1 + MLP_HIDDEN;
        let b2 = w2 + MLP_HIDDEN * MLP_OUT;
        MlpLayout { w1, b1, w2, b2 }
    }
}

/// Softmax cross-entropy of the 2-16-2 tanh MLP over a batch sampled with
/// replacement from the dataset, with manual backprop.
fn mlp_loss(
    p: &[f64],
    points: &[[f64; 2]],
    labels: &[u8],
    batch: usize,
    task_seed: u64,
    batch_seed: u64,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let l = MlpLayout::new();
    let (w1, b1, w2, b2) = (&p[l.w1..l.b1], &p[l.b1..l.w2], &p[l.w2..l.b2], &p[l.b2..]);
    if let Some(g) = grad.as_deref_mut() {
        g.fill(0.0);
    }
    let mut rng = rng::stream(task_seed, &[purpose::BATCH, batch_seed]);
    let mut h = [0.0; MLP_HIDDEN];
    let mut total = 0.0;
    for _ in 0..batch {
        let idx = rng.random_range(0..points.len());
        let input = points[idx];
        let label = labels[idx] as usize;
        for k in 0..MLP_HIDDEN {
            let pre = b1[k] + (0..MLP_IN).map(|j| input[j] * w1[j * MLP_HIDDEN + k]).sum::<f64>();
            h[k] = pre.tanh();
        }
        let mut logits = [0.0; MLP_OUT];
        for (o, logit) in logits.iter_mut().enumerate() {
            *logit = b2[o] + (0..MLP_HIDDEN).map(|k| h[k] * w2[k * MLP_OUT + o]).sum::<f64>();
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - logits[label];
        if let Some(g) = grad.as_deref_mut() {
            let mut dlogit = [0.0; MLP_OUT];
            for o in 0..MLP_OUT {
                dlogit[o] = (logits[o] - lse).exp() - if o == label { 1.0 } else { 0.0 };
                g[l.b2 + o] += dlogit[o];
            }
            for k in 0..MLP_HIDDEN {
                let mut dh = 0.0;
                for o in 0..MLP_OUT {
                    g[l.w2 + k * MLP_OUT + o] += h[k] * dlogit[o];
                    dh += w2[k * MLP_OUT + o] * dlogit[o];
                }
                let dpre = dh * (1.0 - h[k] * h[k]);
                g[l.b1 + k] += dpre;
                for j in 0..MLP_IN {
                    g[l.w1 + j * MLP_HIDDEN + k] += input[j] * dpre;
                }
            }
        }
    }
    let inv = 1.0 / batch as f64;
    if let Some(g) = grad {
        g.iter_mut().for_each(|gi| *gi *= inv);
    }
    (total * inv).max(0.0)
}

/// Batch seed used for `l_init` evaluation of init seed `i`.
fn l_init_batch_seed(i: u64) -> u64 {
    rng::derive(i, &[purpose::BATCH])
}

pub(crate) fn normalization_l_init(task: &TaskInstance) -> f64 {
    (0..L_INIT_SEEDS)
        .map(|i| {
            let x = init_params(task, i);
            eval(task, &x, l_init_batch_seed(i), None)
        })
        .sum::<f64>()
        / L_INIT_SEEDS as f64
}

/// `(l_init, l_best)`: mean loss at init over [`L_INIT_SEEDS`] seeds, and
/// the smoothed final loss of per-task tuned Adam over `horizon` steps,
/// clamped so that `l_best <= l_init`.
pub fn normalization_constants(task: &TaskInstance, horizon: u64) -> (f64, f64) {
    let l_init = normalization_l_init(task);
    let tuned = baselines::tune_raw(task, horizon, 0);
    let l_best = if tuned.smoothed_final.is_finite() { tuned.smoothed_final.min(l_init) } else { l_init };
    (l_init, l_best)
}

/// A weighted mixture of task families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedFamily {
    #[serde(flatten)]
    pub family: TaskFamily,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskDistribution(pub Vec<WeightedFamily>);

impl TaskDistribution {
    pub fn uniform(families: impl IntoIterator<Item = TaskFamily>) -> Self {
        TaskDistribution(families.into_iter().map(|family| WeightedFamily { family, weight: 1.0 }).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::Config("task distribution is empty".into()));
        }
        for wf in &self.0 {
            wf.family.validate()?;
            if !(wf.weight > 0.0 && wf.weight.is_finite()) {
                return Err(Error::Config(format!("{:?}: weight must be positive", wf.family.id)));
            }
        }
        Ok(())
    }

    pub fn pick(&self, seed: u64) -> &TaskFamily {
        let total: f64 = self.0.iter().map(|w| w.weight).sum();
        let mut r = rng::stream(seed, &[purpose::FAMILY_PICK]).random::<f64>() * total;
        for wf in &self.0 {
            if r < wf.weight {
                return &wf.family;
            }
            r -= wf.weight;
        }
        &self.0.last().expect("validated non-empty").family
    }

    pub fn sample(&self, seed: u64, norm_horizon: u64) -> TaskInstance {
        sample_task(self.pick(seed), seed, norm_horizon)
    }
}
