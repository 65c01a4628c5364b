//! The work behind each CLI subcommand, callable without a process.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::checkpoint::{self, Checkpoint};
use super::config::RunConfig;
use super::metrics::{self, CsvLog, SCORES_HEADER, TOURNAMENTS_HEADER};
use crate::baselines::{self, SweepResult};
use crate::error::{Error, Result};
use crate::evaluation::{self, OptimizerSummary};
use crate::inner_loop::{self, LearningCurve, Optimizer};
use crate::learned_opt::LearnedOptParams;
use crate::population::{self, EvalTask, Population, RunObserver, ScoreRecord, TournamentRecord};
use crate::rng::{self, purpose};

pub const TOURNAMENTS_FILE: &str = "tournaments.csv";
pub const SCORES_FILE: &str = "scores.csv";

/// Runs `f` on a pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

struct TrainLog<'a> {
    cfg: &'a RunConfig,
    ckpt_path: PathBuf,
    tournaments: CsvLog,
    scores: CsvLog,
    stop_at: u64,
    last_saved: Option<u64>,
}

impl TrainLog<'_> {
    fn save(&mut self, pop: &Population) -> Result<()> {
        self.tournaments.flush()?;
        self.scores.flush()?;
        Checkpoint::capture(pop, self.cfg, self.tournaments.rows(), self.scores.rows()).save(&self.ckpt_path)?;
        self.last_saved = Some(pop.outer_step);
        Ok(())
    }
}

impl RunObserver for TrainLog<'_> {
    fn on_scores(&mut self, scores: &[ScoreRecord]) -> Result<()> {
        scores.iter().try_for_each(|s| self.scores.push(&metrics::score_row(s)))
    }

    fn on_tournament(&mut self, record: &TournamentRecord) -> Result<()> {
        self.tournaments.push(&metrics::tournament_row(record))
    }

    fn on_checkpoint(&mut self, pop: &Population) -> Result<()> {
        if self.last_saved == Some(pop.outer_step) {
            return Ok(());
        }
        let held = self.tournaments.rows();
        let due = held > 0 && held % self.cfg.checkpoint_every == 0;
        if due || pop.outer_step >= self.stop_at {
            self.save(pop)?;
        }
        Ok(())
    }
}

/// Trains (or resumes) the population described by `cfg`, writing
/// checkpoints and logs under `cfg.out_dir`. Returns the final population.
pub fn train(cfg: &RunConfig, resume: bool) -> Result<Population> {
    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ckpt_path = dir.join(checkpoint::FILE_NAME);
    let ctx = cfg.context();
    let (pop, tournaments, scores) = if ckpt_path.exists() {
        if !resume {
            return Err(Error::Config(format!(
                "{} already holds a checkpoint; pass --resume to continue it",
                dir.display()
            )));
        }
        let ckpt = Checkpoint::load(&ckpt_path)?;
        let expected = cfg.hash();
        if ckpt.config_hash != expected {
            return Err(Error::ConfigHashMismatch { expected, found: ckpt.config_hash });
        }
        (
            ckpt.restore(&ctx)?,
            CsvLog::resume(&dir.join(TOURNAMENTS_FILE), TOURNAMENTS_HEADER, ckpt.tournament_rows)?,
            CsvLog::resume(&dir.join(SCORES_FILE), SCORES_HEADER, ckpt.score_rows)?,
        )
    } else {
        (
            population::init_population(&cfg.pbt, cfg.master_seed),
            CsvLog::create(&dir.join(TOURNAMENTS_FILE), TOURNAMENTS_HEADER)?,
            CsvLog::create(&dir.join(SCORES_FILE), SCORES_HEADER)?,
        )
    };
    let stop_at = cfg.pbt.total_outer_steps;
    let mut log = TrainLog { cfg, ckpt_path, tournaments, scores, stop_at, last_saved: None };
    if pop.outer_step == 0 {
        log.save(&pop)?;
    }
    let workers = cfg.effective_workers()?;
    with_workers(workers, move || {
        let mut pop = pop;
        pop.run_until(&cfg.pbt, &ctx, stop_at, &mut log)?;
        Ok(pop)
    })?
}

/// Which checkpointed member to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MemberChoice {
    Id(usize),
    /// Lowest last logged score, ties to the lower id.
    Best,
}

impl std::str::FromStr for MemberChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "best" {
            return Ok(MemberChoice::Best);
        }
        s.parse().map(MemberChoice::Id).map_err(|_| format!("expected a member id or `best`, got {s:?}"))
    }
}

fn select_member(ckpt: &Checkpoint, choice: MemberChoice) -> Result<usize> {
    match choice {
        MemberChoice::Id(id) => {
            ckpt.members.iter().position(|m| m.id == id).ok_or_else(|| Error::UnknownMember(id.to_string()))
        }
        MemberChoice::Best => ckpt
            .members
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.last_score_bits.map(|b| (f64::from_bits(b), m.id, i)))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, _, i)| i)
            .ok_or_else(|| Error::UnknownMember("best (no member has been scored yet)".into())),
    }
}

/// Curves and summaries for a set of learned optimizers against fixed-lr
/// and per-task tuned Adam on one task set.
#[derive(Clone, Debug)]
pub struct Comparison {
    pub curves: BTreeMap<String, Vec<LearningCurve>>,
    pub tuned_lrs: Vec<f64>,
    pub summaries: Vec<OptimizerSummary>,
}

pub fn compare_on(
    cfg: &RunConfig,
    learned: &[(String, LearnedOptParams)],
    tasks: &[EvalTask],
    steps: u64,
) -> Result<Comparison> {
    let norm = &cfg.norm;
    let mut curves = BTreeMap::new();
    for (name, theta) in learned {
        let cs: Vec<LearningCurve> = tasks
            .par_iter()
            .map(|t| inner_loop::train(&t.task, Optimizer::Learned(theta), steps, t.init_seed, norm))
            .collect();
        curves.insert(name.clone(), cs);
    }
    let adam = cfg.adam_defaults;
    let fixed: Vec<LearningCurve> =
        tasks.par_iter().map(|t| inner_loop::train(&t.task, Optimizer::Adam(adam), steps, t.init_seed, norm)).collect();
    curves.insert(format!("adam-lr{}", adam.lr), fixed);
    let tuned: Vec<(f64, LearningCurve)> =
        tasks.par_iter().map(|t| baselines::tuned_adam(&t.task, steps, t.init_seed, norm)).collect();
    let (tuned_lrs, tuned_curves): (Vec<f64>, Vec<LearningCurve>) = tuned.into_iter().unzip();
    curves.insert("adam-tuned".into(), tuned_curves.clone());
    let summaries = evaluation::compare(&curves, &tuned_curves)?;
    Ok(Comparison { curves, tuned_lrs, summaries })
}

fn write_comparison(out: &Path, cmp: &Comparison) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    metrics::write_curves(&out.join("curves.csv"), &cmp.curves)?;
    metrics::write_mean_curves(&out.join("mean_curves.csv"), &cmp.summaries)?;
    metrics::write_summary(&out.join("summary.csv"), &cmp.summaries)
}

/// Scores one checkpointed member and the Adam baselines on `n_tasks`
/// fresh tasks drawn from `seed`, writing the comparison to `out`.
pub fn evaluate(
    ckpt_path: &Path,
    member: MemberChoice,
    n_tasks: usize,
    steps: u64,
    seed: u64,
    out: &Path,
) -> Result<Comparison> {
    if n_tasks == 0 {
        return Err(Error::Config("--tasks must be >= 1".into()));
    }
    let ckpt = Checkpoint::load(ckpt_path)?;
    let idx = select_member(&ckpt, member)?;
    let theta = ckpt.member_theta(idx)?;
    let cfg = &ckpt.config;
    let cmp = with_workers(cfg.effective_workers()?, || {
        let tasks = population::eval_set(&cfg.tasks, n_tasks, steps, seed);
        compare_on(cfg, &[(format!("member-{}", ckpt.members[idx].id), theta)], &tasks, steps)
    })??;
    write_comparison(out, &cmp)?;
    Ok(cmp)
}

/// Every member on the checkpoint's own score protocol, with a task set
/// disjoint from the tournament sets.
pub fn export_curves(ckpt_path: &Path, out: &Path) -> Result<Comparison> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let cfg = &ckpt.config;
    let learned = (0..ckpt.members.len())
        .map(|i| Ok((format!("member-{}", ckpt.members[i].id), ckpt.member_theta(i)?)))
        .collect::<Result<Vec<_>>>()?;
    let (n, steps) = (cfg.pbt.eval_tasks, cfg.pbt.eval_steps);
    let seed = rng::derive(ckpt.master_seed, &[purpose::EVAL, u64::MAX]);
    let cmp = with_workers(cfg.effective_workers()?, || {
        let tasks = population::eval_set(&cfg.tasks, n, steps, seed);
        compare_on(cfg, &learned, &tasks, steps)
    })??;
    write_comparison(out, &cmp)?;
    Ok(cmp)
}

/// Output of the `baseline` subcommand.
#[derive(Clone, Debug)]
pub struct BaselineReport {
    pub sweep: Vec<SweepResult>,
    /// `(task_seed, best_lr, smoothed final loss)` per task.
    pub tuned: Vec<(u64, f64, f64)>,
}

impl BaselineReport {
    /// Median over the grid of the fixed-lr protocol scores.
    pub fn median_fixed_score(&self) -> f64 {
        let mut s: Vec<f64> = self.sweep.iter().map(|r| r.score).collect();
        s.sort_by(f64::total_cmp);
        s[s.len() / 2]
    }
}

/// Fixed-lr sweep and per-task tuned Adam on an explicit task set.
pub fn baseline_on(tasks: &[EvalTask], steps: u64, cfg: &RunConfig) -> BaselineReport {
    let instances: Vec<_> = tasks.iter().map(|t| (*t.task).clone()).collect();
    let seeds: Vec<u64> = tasks.iter().map(|t| t.init_seed).collect();
    let sweep = baselines::sweep(&instances, &seeds, steps, &cfg.norm);
    let tuned = tasks
        .par_iter()
        .map(|t| {
            let (lr, curve) = baselines::tuned_adam(&t.task, steps, t.init_seed, &cfg.norm);
            (t.task.seed, lr, baselines::smoothed_final(&curve))
        })
        .collect();
    BaselineReport { sweep, tuned }
}

/// Adam baselines on `n_tasks` tasks from the config's distribution;
/// writes `sweep.csv` and `tuned.csv` to the config's output directory.
pub fn baseline(cfg: &RunConfig, n_tasks: usize, steps: u64) -> Result<BaselineReport> {
    if n_tasks == 0 {
        return Err(Error::Config("--tasks must be >= 1".into()));
    }
    let report = with_workers(cfg.effective_workers()?, || {
        let seed = rng::derive(cfg.master_seed, &[purpose::BASELINE]);
        let tasks = population::eval_set(&cfg.tasks, n_tasks, steps, seed);
        baseline_on(&tasks, steps, cfg)
    })?;
    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    metrics::write_sweep(&dir.join("sweep.csv"), &report.sweep)?;
    metrics::write_tuned(&dir.join("tuned.csv"), &report.tuned)?;
    Ok(report)
}
