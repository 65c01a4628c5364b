//! Meta-gradients by antithetic evolution strategies over truncated unrolls,
//! and the self-referential outer step.
//!
//! Every member owns a pool of persistent inner runs. A gradient estimate
//! clones the pool, advances each clone `k` steps under `θ ± ε_j`, and
//! differences the resulting meta-losses. The canonical pool then moves on
//! `k` steps under the unperturbed `θ`, so successive truncations walk along
//! full-length training trajectories.

use std::sync::Arc;

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::NormalizationSpec;
use crate::inner_loop::{self, InnerRunState, Optimizer};
use crate::learned_opt::{self, LearnedOptParams};
use crate::population::PopulationMember;
use crate::rng::{self, purpose};
use crate::tasks::TaskDistribution;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EsConfig {
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_pairs")]
    pub n_pairs: usize,
    #[serde(default = "default_clip")]
    pub clip: f64,
}

fn default_sigma() -> f64 {
    0.01
}
fn default_pairs() -> usize {
    8
}
fn default_clip() -> f64 {
    1.0
}

impl Default for EsConfig {
    fn default() -> Self {
        EsConfig { sigma: default_sigma(), n_pairs: default_pairs(), clip: default_clip() }
    }
}

impl EsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma > 0.0 && self.n_pairs >= 1 && self.clip > 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid ES config {self:?}")))
        }
    }
}

/// Shape of each member's persistent run pool.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    #[serde(default = "default_pool_size")]
    pub size: usize,
    /// Runs are restarted on a fresh task once they reach this many steps.
    #[serde(default = "default_horizon")]
    pub horizon: u64,
}

fn default_pool_size() -> usize {
    4
}
fn default_horizon() -> u64 {
    2000
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig { size: default_pool_size(), horizon: default_horizon() }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size >= 1 && self.horizon >= 1 {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid pool config {self:?}")))
        }
    }
}

/// A pool slot: the run plus the counters that determine its task seed.
#[derive(Clone, Debug)]
pub struct PoolRun {
    pub slot: u64,
    pub generation: u64,
    pub run: InnerRunState,
}

/// Everything an outer step reads besides the member itself.
#[derive(Clone, Copy, Debug)]
pub struct OuterContext<'a> {
    pub dist: &'a TaskDistribution,
    pub es: &'a EsConfig,
    pub pool: &'a PoolConfig,
    pub norm: &'a NormalizationSpec,
}

/// Seed of the task in `slot` after `generation` restarts.
pub fn pool_task_seed(member_seed: u64, slot: u64, generation: u64) -> u64 {
    rng::derive(member_seed, &[purpose::POOL_TASK, slot, generation])
}

pub fn fresh_pool_run(ctx: &OuterContext<'_>, member_seed: u64, slot: u64, generation: u64) -> PoolRun {
    let task_seed = pool_task_seed(member_seed, slot, generation);
    let task = Arc::new(ctx.dist.sample(task_seed, ctx.pool.horizon));
    let run = InnerRunState::new(task, rng::derive(task_seed, &[purpose::PARAM_INIT]));
    PoolRun { slot, generation, run }
}

pub fn fresh_pool(ctx: &OuterContext<'_>, member_seed: u64, first_generation: u64) -> Vec<PoolRun> {
    (0..ctx.pool.size as u64)
        .into_par_iter()
        .map(|slot| fresh_pool_run(ctx, member_seed, slot, first_generation))
        .collect()
}

/// `n_pairs` directions `ε_j ~ N(0, σ² I)`, direction `j` keyed by `(seed, j)`.
pub fn perturbations(seed: u64, n_pairs: usize, sigma: f64, dim: usize) -> Vec<Vec<f64>> {
    (0..n_pairs as u64)
        .map(|j| {
            let mut r = rng::stream(seed, &[purpose::ES, j]);
            (0..dim).map(|_| sigma * r.sample::<f64, _>(StandardNormal)).collect()
        })
        .collect()
}

/// Antithetic estimate `1/(2σ²n) Σ_j ε_j (L(θ+ε_j) − L(θ−ε_j))`, before
/// clipping. The `2n` objective evaluations run in parallel; the reduction
/// is in fixed index order.
pub fn antithetic_estimate<F>(theta: &[f64], eps: &[Vec<f64>], sigma: f64, objective: F) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let values: Vec<f64> = (0..2 * eps.len())
        .into_par_iter()
        .map(|i| {
            let e = &eps[i / 2];
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            let point: Vec<f64> = theta.iter().zip(e).map(|(t, e)| t + sign * e).collect();
            objective(&point)
        })
        .collect();
    let mut grad = vec![0.0; theta.len()];
    for (j, e) in eps.iter().enumerate() {
        let diff = values[2 * j] - values[2 * j + 1];
        for (g, ej) in grad.iter_mut().zip(e) {
            *g += ej * diff;
        }
    }
    let scale = 1.0 / (2.0 * sigma * sigma * eps.len() as f64);
    grad.iter_mut().for_each(|g| *g *= scale);
    grad
}

pub fn clip_in_place(grad: &mut [f64], clip: f64) {
    for g in grad {
        *g = if g.is_nan() { 0.0 } else { g.clamp(-clip, clip) };
    }
}

/// Mean meta-loss of the pool after `k` steps under `theta`, on clones.
fn pool_meta_loss(theta: &LearnedOptParams, pool: &[PoolRun], k: u64, norm: &NormalizationSpec) -> f64 {
    let total: f64 = pool
        .iter()
        .map(|p| {
            let mut run = p.run.clone();
            inner_loop::meta_loss(&inner_loop::advance(&mut run, Optimizer::Learned(theta), k, norm))
        })
        .sum();
    total / pool.len() as f64
}

/// Clipped ES meta-gradient for `theta` over truncations of length `k`,
/// followed by the canonical `k`-step advance of `pool` under `theta`.
pub fn es_gradient(
    theta: &LearnedOptParams,
    pool: &mut [PoolRun],
    k: u64,
    ctx: &OuterContext<'_>,
    member_seed: u64,
    seed: u64,
) -> Vec<f64> {
    assert!(!pool.is_empty(), "ES needs at least one inner run");
    let eps = perturbations(seed, ctx.es.n_pairs, ctx.es.sigma, theta.0.len());
    let snapshot: &[PoolRun] = pool;
    let mut grad = antithetic_estimate(theta.as_slice(), &eps, ctx.es.sigma, |point| {
        let perturbed = LearnedOptParams(point.to_vec().into());
        pool_meta_loss(&perturbed, snapshot, k, ctx.norm)
    });
    clip_in_place(&mut grad, ctx.es.clip);
    advance_pool(theta, pool, k, ctx, member_seed);
    grad
}

/// Advances every run `k` steps under `theta`, restarting runs that reached
/// the horizon or diverged.
pub fn advance_pool(theta: &LearnedOptParams, pool: &mut [PoolRun], k: u64, ctx: &OuterContext<'_>, member_seed: u64) {
    pool.par_iter_mut().for_each(|p| {
        inner_loop::advance(&mut p.run, Optimizer::Learned(theta), k, ctx.norm);
        if p.run.is_diverged() || p.run.step >= ctx.pool.horizon {
            *p = fresh_pool_run(ctx, member_seed, p.slot, p.generation + 1);
        }
    });
}

/// One outer update of `member.theta`, driven by `outer_opt_theta` (the
/// weights of the member's assigned outer-optimizer, read before this step).
pub fn outer_step(member: &mut PopulationMember, outer_opt_theta: &LearnedOptParams, ctx: &OuterContext<'_>) {
    let seed = rng::derive(member.rng_seed, &[purpose::ES, member.outer_step_count]);
    let grad = es_gradient(&member.theta, &mut member.run_pool, member.truncation, ctx, member.rng_seed, seed);
    assert!(grad.iter().all(|g| g.is_finite()), "clipped ES gradient must be finite");
    learned_opt::step(outer_opt_theta, &mut member.theta.0, &grad, &mut member.outer_state)
        .expect("outer state is θ-shaped");
    assert!(member.theta.0.is_finite(), "bounded outer update produced a non-finite θ");
    member.outer_step_count += 1;
}
