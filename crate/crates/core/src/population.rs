//! Population based training over learned optimizers.
//!
//! Members take outer steps in lock-step rounds. Each member's θ is updated by
//! the learned optimizer of the member it points at (`outer_opt_idx`, possibly
//! itself), with all θ values snapshotted at the start of the round. Every
//! `tournament_interval` rounds two random members are scored on freshly
//! sampled evaluation tasks; the loser is overwritten by the winner's θ,
//! outer-optimizer assignment and outer state, then explored: with
//! `swap_prob` it picks a new random outer-optimizer, with
//! `trunc_resample_prob` a new truncation length.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::NormalizationSpec;
use crate::inner_loop::{self, Optimizer};
use crate::learned_opt::{self, LearnedOptParams, OptimizerState, THETA_LEN};
use crate::outer_es::{self, OuterContext, PoolConfig, PoolRun};
use crate::rng::{self, purpose};
use crate::tasks::{TaskDistribution, TaskInstance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PbtConfig {
    pub pop_size: usize,
    /// Outer steps between tournaments.
    pub tournament_interval: u64,
    pub eval_tasks: usize,
    pub eval_steps: u64,
    #[serde(default = "default_swap")]
    pub swap_prob: f64,
    #[serde(default = "default_resample")]
    pub trunc_resample_prob: f64,
    pub trunc_choices: Vec<u64>,
    pub total_outer_steps: u64,
    #[serde(default = "default_init_scale")]
    pub theta_init_scale: f64,
    /// Score every member (not only the two contestants) at each tournament.
    /// Contestant scores are identical either way.
    #[serde(default = "default_true")]
    pub score_all: bool,
    #[serde(default)]
    pub pool: PoolConfig,
    /// Wall-clock tournament schedule: fire a tournament after the first
    /// round that ends this many seconds after the previous one. Replaces
    /// `tournament_interval` and gives up run-to-run reproducibility.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tournament_every_secs: Option<f64>,
}

fn default_swap() -> f64 {
    0.5
}
fn default_resample() -> f64 {
    0.1
}
fn default_init_scale() -> f64 {
    learned_opt::DEFAULT_INIT_SCALE
}
fn default_true() -> bool {
    true
}

impl PbtConfig {
    /// Full-scale values: 10 members, 100 tasks × 10,000 steps,
    /// truncations 200/300/400/800.
    pub fn full_scale(tournament_interval: u64, total_outer_steps: u64) -> Self {
        PbtConfig {
            pop_size: 10,
            tournament_interval,
            eval_tasks: 100,
            eval_steps: 10_000,
            swap_prob: default_swap(),
            trunc_resample_prob: default_resample(),
            trunc_choices: vec![200, 300, 400, 800],
            total_outer_steps,
            theta_init_scale: default_init_scale(),
            score_all: true,
            pool: PoolConfig { size: 4, horizon: 20_000 },
            tournament_every_secs: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        let problems = [
            (self.pop_size < 2, "pop_size must be >= 2"),
            (self.tournament_interval == 0, "tournament_interval must be positive"),
            (self.eval_tasks == 0, "eval_tasks must be positive"),
            (self.eval_steps == 0, "eval_steps must be positive"),
            (!prob(self.swap_prob), "swap_prob must be in [0, 1]"),
            (!prob(self.trunc_resample_prob), "trunc_resample_prob must be in [0, 1]"),
            (self.trunc_choices.is_empty(), "trunc_choices must be non-empty"),
            (self.trunc_choices.contains(&0), "trunc_choices must be positive"),
            (!(self.theta_init_scale >= 0.0), "theta_init_scale must be >= 0"),
            (self.tournament_every_secs.is_some_and(|t| !(t > 0.0)), "tournament_every_secs must be positive"),
        ];
        if let Some((_, msg)) = problems.iter().find(|(bad, _)| *bad) {
            return Err(Error::Config((*msg).into()));
        }
        self.pool.validate()
    }
}

#[derive(Clone, Debug)]
pub struct PopulationMember {
    pub id: usize,
    pub theta: LearnedOptParams,
    pub outer_opt_idx: usize,
    pub outer_state: OptimizerState,
    pub truncation: u64,
    pub run_pool: Vec<PoolRun>,
    /// The pool is rebuilt with fresh tasks before the next outer step.
    pub pool_stale: bool,
    pub rng_seed: u64,
    pub outer_step_count: u64,
    pub last_score: Option<f64>,
}

impl PopulationMember {
    /// Rebuilds a stale or empty pool, bumping each slot's generation.
    pub fn ensure_pool(&mut self, ctx: &OuterContext<'_>) {
        if !self.pool_stale && self.run_pool.len() == ctx.pool.size {
            return;
        }
        let next_gen =
            |slot: u64| -> u64 { self.run_pool.iter().find(|p| p.slot == slot).map_or(0, |p| p.generation + 1) };
        let gens: Vec<u64> = (0..ctx.pool.size as u64).map(next_gen).collect();
        let seed = self.rng_seed;
        self.run_pool = gens
            .into_par_iter()
            .enumerate()
            .map(|(slot, generation)| outer_es::fresh_pool_run(ctx, seed, slot as u64, generation))
            .collect();
        self.pool_stale = false;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TournamentRecord {
    pub step: u64,
    pub contestants: (usize, usize),
    pub scores: (f64, f64),
    pub winner: usize,
    pub swapped_outer: bool,
    pub resampled_trunc: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub outer_step: u64,
    pub member_id: usize,
    pub score: f64,
    pub truncation: u64,
    pub outer_opt_idx: usize,
}

#[derive(Clone, Debug)]
pub struct Population {
    pub master_seed: u64,
    pub outer_step: u64,
    pub members: Vec<PopulationMember>,
}

/// Outer-optimizer index and truncation drawn for member `i` at init.
pub fn initial_assignment(cfg: &PbtConfig, seed: u64, i: usize) -> (usize, u64) {
    let mut r = rng::stream(seed, &[purpose::POPULATION_INIT, i as u64]);
    let outer = r.random_range(0..cfg.pop_size);
    let trunc = cfg.trunc_choices[r.random_range(0..cfg.trunc_choices.len())];
    (outer, trunc)
}

/// `pop_size` members with independent random θ. Run pools are created
/// lazily on the first outer step.
pub fn init_population(cfg: &PbtConfig, seed: u64) -> Population {
    let members = (0..cfg.pop_size)
        .map(|i| {
            let rng_seed = rng::derive(seed, &[purpose::MEMBER, i as u64]);
            let (outer_opt_idx, truncation) = initial_assignment(cfg, seed, i);
            PopulationMember {
                id: i,
                theta: learned_opt::init_theta(rng_seed, cfg.theta_init_scale),
                outer_opt_idx,
                outer_state: OptimizerState::new(THETA_LEN),
                truncation,
                run_pool: Vec::new(),
                pool_stale: true,
                rng_seed,
                outer_step_count: 0,
                last_score: None,
            }
        })
        .collect();
    Population { master_seed: seed, outer_step: 0, members }
}

/// An evaluation task with the init seed its run uses.
#[derive(Clone, Debug)]
pub struct EvalTask {
    pub task: Arc<TaskInstance>,
    pub init_seed: u64,
}

/// `n` tasks from a stream disjoint from all training streams.
pub fn eval_set(dist: &TaskDistribution, n: usize, steps: u64, seed: u64) -> Vec<EvalTask> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let task_seed = rng::derive(seed, &[purpose::EVAL, i]);
            EvalTask {
                task: Arc::new(dist.sample(task_seed, steps)),
                init_seed: rng::derive(task_seed, &[purpose::PARAM_INIT]),
            }
        })
        .collect()
}

/// Mean meta-loss of fresh `steps`-step runs with `theta` over the task set.
/// Lower is better.
pub fn score_theta(theta: &LearnedOptParams, tasks: &[EvalTask], steps: u64, norm: &NormalizationSpec) -> f64 {
    let per_task: Vec<f64> = tasks
        .par_iter()
        .map(|t| {
            inner_loop::meta_loss(&inner_loop::train(&t.task, Optimizer::Learned(theta), steps, t.init_seed, norm))
        })
        .collect();
    per_task.iter().sum::<f64>() / per_task.len() as f64
}

pub fn score(
    member: &PopulationMember,
    dist: &TaskDistribution,
    eval_tasks: usize,
    eval_steps: u64,
    seed: u64,
    norm: &NormalizationSpec,
) -> f64 {
    score_theta(&member.theta, &eval_set(dist, eval_tasks, eval_steps, seed), eval_steps, norm)
}

/// Exploit and explore given a scoring function (`member index → score`).
/// The scorer is called for the two contestants only.
pub fn tournament_with<F>(pop: &mut Population, cfg: &PbtConfig, rng: &mut rng::Rng, mut scorer: F) -> TournamentRecord
where
    F: FnMut(usize) -> f64,
{
    let n = pop.members.len();
    assert!(n >= 2, "tournament needs two members");
    let a = rng.random_range(0..n);
    let mut b = rng.random_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    let (sa, sb) = (scorer(a), scorer(b));
    pop.members[a].last_score = Some(sa);
    pop.members[b].last_score = Some(sb);
    let (id_a, id_b) = (pop.members[a].id, pop.members[b].id);
    let a_wins = sa < sb || (sa == sb && id_a < id_b);
    let (w, l) = if a_wins { (a, b) } else { (b, a) };

    let (theta, outer_idx, outer_state) = {
        let winner = &pop.members[w];
        (winner.theta.clone(), winner.outer_opt_idx, winner.outer_state.clone())
    };
    let swapped = rng.random::<f64>() < cfg.swap_prob;
    let new_outer = rng.random_range(0..n);
    let resampled = rng.random::<f64>() < cfg.trunc_resample_prob;
    let new_trunc = cfg.trunc_choices[rng.random_range(0..cfg.trunc_choices.len())];

    let loser = &mut pop.members[l];
    loser.theta = theta;
    loser.outer_opt_idx = if swapped { new_outer } else { outer_idx };
    loser.outer_state = outer_state;
    if resampled {
        loser.truncation = new_trunc;
    }
    loser.pool_stale = true;

    TournamentRecord {
        step: pop.outer_step,
        contestants: (id_a, id_b),
        scores: (sa, sb),
        winner: pop.members[w].id,
        swapped_outer: swapped,
        resampled_trunc: resampled,
    }
}

/// Hooks for logging and persistence during [`Population::run_until`].
pub trait RunObserver {
    fn on_scores(&mut self, _scores: &[ScoreRecord]) -> Result<()> {
        Ok(())
    }
    fn on_tournament(&mut self, _record: &TournamentRecord) -> Result<()> {
        Ok(())
    }
    /// Called after every tournament, and once at the end of the run.
    fn on_checkpoint(&mut self, _pop: &Population) -> Result<()> {
        Ok(())
    }
}

pub struct NoopObserver;
impl RunObserver for NoopObserver {}

impl Population {
    pub fn thetas(&self) -> Vec<LearnedOptParams> {
        self.members.iter().map(|m| m.theta.clone()).collect()
    }

    /// One round: every member takes an outer step using outer-optimizer
    /// weights from the start of the round.
    pub fn round(&mut self, ctx: &OuterContext<'_>) {
        let snapshot = self.thetas();
        self.members.par_iter_mut().for_each(|m| {
            m.ensure_pool(ctx);
            let outer = &snapshot[m.outer_opt_idx];
            outer_es::outer_step(m, outer, ctx);
        });
        self.outer_step += 1;
    }

    /// Scores and the tournament record for the tournament at the current
    /// outer step.
    pub fn tournament(&mut self, cfg: &PbtConfig, ctx: &OuterContext<'_>) -> (Vec<ScoreRecord>, TournamentRecord) {
        // at most one tournament per round, so the outer step identifies it
        let index = self.outer_step;
        let eval_seed = rng::derive(self.master_seed, &[purpose::EVAL, index]);
        let tasks = eval_set(ctx.dist, cfg.eval_tasks, cfg.eval_steps, eval_seed);
        let mut cache: Vec<Option<f64>> = vec![None; self.members.len()];
        if cfg.score_all {
            let scores: Vec<f64> =
                self.members.par_iter().map(|m| score_theta(&m.theta, &tasks, cfg.eval_steps, ctx.norm)).collect();
            cache = scores.into_iter().map(Some).collect();
        }
        let thetas = self.thetas();
        let before: Vec<(u64, usize)> = self.members.iter().map(|m| (m.truncation, m.outer_opt_idx)).collect();
        let mut rng = rng::stream(self.master_seed, &[purpose::TOURNAMENT, index]);
        let record = tournament_with(self, cfg, &mut rng, |i| {
            *cache[i].get_or_insert_with(|| score_theta(&thetas[i], &tasks, cfg.eval_steps, ctx.norm))
        });
        let outer_step = self.outer_step;
        let scores = cache
            .iter()
            .enumerate()
            .filter_map(|(i, s)| {
                s.map(|score| {
                    self.members[i].last_score = Some(score);
                    ScoreRecord {
                        outer_step,
                        member_id: self.members[i].id,
                        score,
                        truncation: before[i].0,
                        outer_opt_idx: before[i].1,
                    }
                })
            })
            .collect();
        (scores, record)
    }

    /// Runs rounds and tournaments until `stop_at` outer steps (capped by
    /// `cfg.total_outer_steps`).
    pub fn run_until(
        &mut self,
        cfg: &PbtConfig,
        ctx: &OuterContext<'_>,
        stop_at: u64,
        observer: &mut dyn RunObserver,
    ) -> Result<()> {
        let stop_at = stop_at.min(cfg.total_outer_steps);
        let mut last = Instant::now();
        while self.outer_step < stop_at {
            self.round(ctx);
            let due = match cfg.tournament_every_secs {
                Some(secs) => last.elapsed().as_secs_f64() >= secs,
                None => self.outer_step % cfg.tournament_interval == 0,
            };
            if due {
                last = Instant::now();
                let (scores, record) = self.tournament(cfg, ctx);
                observer.on_scores(&scores)?;
                observer.on_tournament(&record)?;
                observer.on_checkpoint(self)?;
            }
        }
        observer.on_checkpoint(self)
    }

    /// Index of the member with the lowest last logged score, ties to the
    /// lower id. `None` if nothing has been scored yet.
    pub fn best_member(&self) -> Option<usize> {
        self.members
            .iter()
            .filter_map(|m| m.last_score.map(|s| (s, m.id)))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, id)| id)
    }
}
