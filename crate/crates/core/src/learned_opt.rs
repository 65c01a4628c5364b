//! Per-parameter MLP learned optimizer.
//!
//! Each parameter is updated independently from a row of ten features by a
//! 10→32→2 tanh network. The two outputs are a direction `d` and a
//! log-magnitude `m`, combined as `Δx = λ₁·d·exp(λ₂·m)`.
//!
//! Weight layout (row-major, `f64`): `W1 [10×32] | b1 [32] | W2 [32×2] | b2 [2]`.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};
use crate::rng::{self, purpose};
use crate::tasks::ParamVector;

pub const N_FEATURES: usize = 10;
pub const HIDDEN: usize = 32;
pub const N_OUTPUTS: usize = 2;

const W1: usize = 0;
const B1: usize = W1 + N_FEATURES * HIDDEN;
const W2: usize = B1 + HIDDEN;
const B2: usize = W2 + HIDDEN * N_OUTPUTS;
pub const THETA_LEN: usize = B2 + N_OUTPUTS;

pub const STEP_MULT: f64 = 1e-3;
pub const MAGNITUDE_MULT: f64 = 1e-3;
pub const OUTPUT_CLAMP: f64 = 10.0;
pub const DEFAULT_INIT_SCALE: f64 = 0.01;

pub const MOMENTUM_DECAYS: [f64; 3] = [0.9, 0.99, 0.999];
pub const RMS_DECAY: f64 = 0.999;

const FEATURE_EPS: f64 = 1e-8;
/// Columns 0..NORMALIZED_COLS are RMS-normalized over the parameter axis.
const NORMALIZED_COLS: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LearnedOptParams(pub ParamVector);

impl LearnedOptParams {
    pub fn zeros() -> Self {
        LearnedOptParams(ParamVector::zeros(THETA_LEN))
    }

    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        check_len(THETA_LEN, values.len())?;
        Ok(LearnedOptParams(ParamVector(values)))
    }

    /// Sets `W2 = 0` and `b2 = (d, m)`: a network that outputs the constant
    /// `(d, m)` for every input.
    pub fn constant_head(d: f64, m: f64) -> Self {
        let mut theta = Self::zeros();
        theta.0[B2] = d;
        theta.0[B2 + 1] = m;
        theta
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn w1(&self) -> &[f64] {
        &self.0[W1..B1]
    }
    pub fn b1(&self) -> &[f64] {
        &self.0[B1..W2]
    }
    pub fn w2(&self) -> &[f64] {
        &self.0[W2..B2]
    }
    pub fn b2(&self) -> &[f64] {
        &self.0[B2..]
    }
}

/// θ with i.i.d. N(0, scale²) entries.
pub fn init_theta(seed: u64, scale: f64) -> LearnedOptParams {
    assert!(scale >= 0.0, "init scale must be non-negative");
    let mut rng = rng::stream(seed, &[purpose::THETA_INIT]);
    let values = (0..THETA_LEN).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    LearnedOptParams(ParamVector(values))
}

/// Accumulators shared by the learned optimizer and Adam. Adam uses `m1`,
/// `v` and `t` only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
    pub m3: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(n: usize) -> Self {
        OptimizerState { m1: vec![0.0; n], m2: vec![0.0; n], m3: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn len(&self) -> usize {
        self.m1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m1.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        [&self.m1, &self.m2, &self.m3, &self.v].iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    /// EMA update with `grad`, incrementing `t`.
    pub fn accumulate(&mut self, grad: &[f64]) -> Result<()> {
        check_len(self.len(), grad.len())?;
        let [b1, b2, b3] = MOMENTUM_DECAYS;
        for (i, &g) in grad.iter().enumerate() {
            self.m1[i] = b1 * self.m1[i] + (1.0 - b1) * g;
            self.m2[i] = b2 * self.m2[i] + (1.0 - b2) * g;
            self.m3[i] = b3 * self.m3[i] + (1.0 - b3) * g;
            self.v[i] = RMS_DECAY * self.v[i] + (1.0 - RMS_DECAY) * g * g;
        }
        self.t += 1;
        Ok(())
    }
}

pub fn update_state(state: &OptimizerState, grad: &[f64]) -> Result<OptimizerState> {
    let mut next = state.clone();
    next.accumulate(grad)?;
    Ok(next)
}

/// Row-major `rows × N_FEATURES` feature matrix:
/// `[g, m1, m2, m3, g/√(v+ε), x, tanh(t/10), tanh(t/100), tanh(t/1000), 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub data: Vec<f64>,
    pub diverged: bool,
}

impl FeatureMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * N_FEATURES..(i + 1) * N_FEATURES]
    }

    pub fn column(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).map(move |i| self.data[i * N_FEATURES + c])
    }
}

/// Builds the features for one step. `state` must already include `grad`.
pub fn compute_features(x: &[f64], grad: &[f64], state: &OptimizerState) -> Result<FeatureMatrix> {
    let n = x.len();
    check_len(n, grad.len())?;
    check_len(n, state.len())?;
    let mut data = vec![0.0; n * N_FEATURES];
    let t = state.t as f64;
    let time = [(t / 10.0).tanh(), (t / 100.0).tanh(), (t / 1000.0).tanh(), 1.0];
    let mut sum_sq = [0.0; NORMALIZED_COLS];
    for i in 0..n {
        let row = &mut data[i * N_FEATURES..(i + 1) * N_FEATURES];
        row[0] = grad[i];
        row[1] = state.m1[i];
        row[2] = state.m2[i];
        row[3] = state.m3[i];
        row[4] = grad[i] / (state.v[i] + FEATURE_EPS).sqrt();
        row[5] = x[i];
        row[NORMALIZED_COLS..].copy_from_slice(&time);
        for (s, v) in sum_sq.iter_mut().zip(row.iter()) {
            *s += v * v;
        }
    }
    let diverged = !data.iter().all(|v| v.is_finite());
    if !diverged && n > 0 {
        let scale: Vec<f64> = sum_sq.iter().map(|s| 1.0 / ((s / n as f64).sqrt() + FEATURE_EPS)).collect();
        for row in data.chunks_exact_mut(N_FEATURES) {
            for (v, s) in row.iter_mut().zip(&scale) {
                *v *= s;
            }
        }
    }
    Ok(FeatureMatrix { rows: n, data, diverged })
}

/// Clamped `(d, m)` network outputs for one feature row.
#[inline]
pub fn mlp_outputs(theta: &LearnedOptParams, features: &[f64]) -> (f64, f64) {
    let w = theta.as_slice();
    let (w1, b1, w2, b2) = (&w[W1..B1], &w[B1..W2], &w[W2..B2], &w[B2..]);
    let mut pre = [0.0; HIDDEN];
    pre.copy_from_slice(b1);
    for (j, &f) in features.iter().enumerate() {
        if f != 0.0 {
            let wrow = &w1[j * HIDDEN..(j + 1) * HIDDEN];
            for (p, wv) in pre.iter_mut().zip(wrow) {
                *p += f * wv;
            }
        }
    }
    let (mut d, mut m) = (b2[0], b2[1]);
    for (k, p) in pre.iter().enumerate() {
        let h = p.tanh();
        d += h * w2[k * N_OUTPUTS];
        m += h * w2[k * N_OUTPUTS + 1];
    }
    (d.clamp(-OUTPUT_CLAMP, OUTPUT_CLAMP), m.clamp(-OUTPUT_CLAMP, OUTPUT_CLAMP))
}

/// `x_i + λ₁·d_i·exp(λ₂·m_i)` for every parameter. Diverged features give
/// a NaN-filled (diverged) vector.
pub fn apply_update(theta: &LearnedOptParams, x: &[f64], features: &FeatureMatrix) -> Result<ParamVector> {
    let mut out = ParamVector(x.to_vec());
    apply_update_in_place(theta, &mut out, features)?;
    Ok(out)
}

pub fn apply_update_in_place(theta: &LearnedOptParams, x: &mut [f64], features: &FeatureMatrix) -> Result<()> {
    check_len(x.len(), features.rows)?;
    if features.diverged {
        x.fill(f64::NAN);
        return Ok(());
    }
    for (i, xi) in x.iter_mut().enumerate() {
        let (d, m) = mlp_outputs(theta, features.row(i));
        *xi += STEP_MULT * d * (MAGNITUDE_MULT * m).exp();
    }
    Ok(())
}

/// One full learned-optimizer step: accumulate, featurize, update.
pub fn step(theta: &LearnedOptParams, x: &mut [f64], grad: &[f64], state: &mut OptimizerState) -> Result<()> {
    state.accumulate(grad)?;
    let features = compute_features(x, grad, state)?;
    apply_update_in_place(theta, x, &features)
}

/// Largest possible |Δx_i| for clamped outputs.
pub fn max_step() -> f64 {
    STEP_MULT * OUTPUT_CLAMP * (MAGNITUDE_MULT * OUTPUT_CLAMP).exp()
}
