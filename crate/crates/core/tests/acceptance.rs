//! One pass/fail line per acceptance criterion. Exits non-zero if any fails.
//!
//! Criterion 1 trains five full bootstrap runs and dominates the runtime.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::{cosine, small_config, worst_fd_error, FAMILIES};
use rand_distr::{Distribution, StandardNormal};
use selfopt::baselines::{self, AdamConfig};
use selfopt::harness::checkpoint::{self, Checkpoint};
use selfopt::harness::commands::{self, MemberChoice};
use selfopt::harness::RunConfig;
use selfopt::inner_loop::{self, InnerRunState, Optimizer};
use selfopt::learned_opt::{LearnedOptParams, OptimizerState, THETA_LEN};
use selfopt::outer_es;
use selfopt::population::{self, init_population, tournament_with};
use selfopt::rng::{self, purpose};
use selfopt::tasks;

type Outcome = (bool, String);

fn bootstrap_config(seed: u64, out: &Path) -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/bootstrap.toml");
    let mut cfg = RunConfig::load(&path).expect("configs/bootstrap.toml");
    cfg.master_seed = seed;
    cfg.out_dir = out.to_path_buf();
    cfg
}

/// `outer_step → scores` from a run's scores.csv.
fn scores_by_step(dir: &Path) -> BTreeMap<u64, Vec<f64>> {
    let text = std::fs::read_to_string(dir.join("scores.csv")).unwrap();
    let mut out: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for row in text.lines().skip(1) {
        let f: Vec<&str> = row.split(',').collect();
        out.entry(f[0].parse().unwrap()).or_default().push(f[2].parse().unwrap());
    }
    out
}

fn min(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn criterion_1() -> Outcome {
    let seeds = 0..5u64;
    let mut lines = Vec::new();
    let mut b_wins = 0;
    let (mut a0, mut c0) = (false, false);
    for seed in seeds {
        let dir = tempfile::tempdir().unwrap();
        let cfg = bootstrap_config(seed, dir.path());
        let t = Instant::now();
        commands::train(&cfg, false).unwrap();
        let by_step = scores_by_step(dir.path());
        let steps: Vec<u64> = by_step.keys().copied().collect();
        let first = min(&by_step[&steps[0]]);
        let last_step = *steps.last().unwrap();
        let last = min(&by_step[&last_step]);
        let early_max =
            steps.iter().take(3).map(|s| by_step[s].iter().copied().fold(f64::MIN, f64::max)).fold(f64::MIN, f64::max);

        let eval_seed = rng::derive(seed, &[purpose::EVAL, last_step]);
        let eval = population::eval_set(&cfg.tasks, cfg.pbt.eval_tasks, cfg.pbt.eval_steps, eval_seed);
        let median = commands::baseline_on(&eval, cfg.pbt.eval_steps, &cfg).median_fixed_score();

        let (a, b, c) = (last <= 0.5 * first, last < median, early_max >= 1.0);
        if seed == 0 {
            a0 = a;
            c0 = c;
        }
        b_wins += b as u32;
        lines.push(format!(
            "seed {seed}: first best {first:.4}, final best {last:.4} (ratio {:.3}), median fixed-lr Adam {median:.4}, max early score {early_max:.4}, {:.0}s",
            last / first,
            t.elapsed().as_secs_f64()
        ));
    }
    let pass = a0 && c0 && b_wins >= 3;
    (pass, format!("(a) seed 0 {a0}, (b) {b_wins}/5 seeds, (c) seed 0 {c0}\n    {}", lines.join("\n    ")))
}

fn criterion_2() -> Outcome {
    let (n_pairs, sigma) = (128, 0.01);
    let mut cosines = Vec::new();
    let mut pooled = vec![0.0; THETA_LEN];
    let mut truth = Vec::new();
    let mut r = rng::stream(2024, &[0]);
    let theta_star: Vec<f64> =
        (0..THETA_LEN).map(|_| 0.1 * Distribution::<f64>::sample(&StandardNormal, &mut r)).collect();
    let theta: Vec<f64> = (0..THETA_LEN).map(|_| 0.1 * Distribution::<f64>::sample(&StandardNormal, &mut r)).collect();
    let objective = |x: &[f64]| x.iter().zip(&theta_star).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    truth.extend(theta.iter().zip(&theta_star).map(|(a, b)| 2.0 * (a - b)));
    for seed in 0..10 {
        let eps = outer_es::perturbations(seed, n_pairs, sigma, THETA_LEN);
        let mut g = outer_es::antithetic_estimate(&theta, &eps, sigma, objective);
        outer_es::clip_in_place(&mut g, 1.0);
        for (p, v) in pooled.iter_mut().zip(&g) {
            *p += v / 10.0;
        }
        cosines.push(cosine(&g, &truth));
    }
    let mean = cosines.iter().sum::<f64>() / cosines.len() as f64;
    let expected = (n_pairs as f64 / (n_pairs + THETA_LEN + 1) as f64).sqrt();
    (
        mean >= 0.8,
        format!(
            "mean per-seed cosine {mean:.3} over 10 seeds (random-direction theory sqrt(n/(n+D+1)) = {expected:.3} for D={THETA_LEN}); cosine of the 10-seed mean estimate {:.3}",
            cosine(&pooled, &truth)
        ),
    )
}

fn criterion_3() -> Outcome {
    let errs: Vec<(String, f64)> = FAMILIES.iter().map(|&f| (format!("{f:?}"), worst_fd_error(f, 1, 10))).collect();
    let worst = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    let detail = errs.iter().map(|(f, e)| format!("{f} {e:.1e}")).collect::<Vec<_>>().join(", ");
    (worst <= 1e-5, format!("worst relative error per family: {detail}"))
}

fn criterion_4() -> Outcome {
    let cfg = AdamConfig::new(0.01);
    let mut worst_first = 0.0f64;
    for g in [-3.0, -1e-4, 0.5, 2.0, 1e3] {
        let (x, _) = baselines::adam_step(&OptimizerState::new(1), &[1.0], &[g], &cfg).unwrap();
        // m̂ = g and v̂ = g² at t = 1
        let expected = 1.0 - 0.01 * g / ((g * g).sqrt() + 1e-8);
        worst_first = worst_first.max((x[0] - expected).abs());
    }
    let mut worst_late = 0.0f64;
    for g in [1e-3, 1.0, 1e4] {
        let mut s = OptimizerState::new(1);
        let mut x = vec![0.0];
        let mut prev = 0.0;
        for _ in 0..10_000 {
            prev = x[0];
            baselines::adam_step_in_place(&mut s, &mut x, &[g], &cfg).unwrap();
        }
        worst_late = worst_late.max(((prev - x[0]).abs() - 0.01).abs() / 0.01);
    }
    (
        worst_first <= 1e-12 && worst_late <= 0.01,
        format!("t=1 max abs error {worst_first:.1e}; step at t=10000 within {:.3}% of lr", 100.0 * worst_late),
    )
}

fn criterion_5() -> Outcome {
    let mut cfg = population::PbtConfig::full_scale(1, 0);
    cfg.pop_size = 6;
    cfg.theta_init_scale = 1.0;
    let (mut n, mut swaps, mut resamples) = (0u32, 0u32, 0u32);
    let (mut copy_ok, mut best_ok) = (true, true);
    for p in 0..1000u64 {
        let mut pop = init_population(&cfg, p);
        let mut r = rng::stream(p, &[77]);
        let mut best = f64::INFINITY;
        for _ in 0..10 {
            let before = pop.clone();
            let rec = tournament_with(&mut pop, &cfg, &mut r, |i| before.members[i].theta.as_slice()[0]);
            let (a, b) = rec.contestants;
            let loser = if rec.winner == a { b } else { a };
            copy_ok &= pop.members[loser].theta == before.members[rec.winner].theta;
            let now = pop.members.iter().map(|m| m.theta.as_slice()[0]).fold(f64::INFINITY, f64::min);
            best_ok &= now <= best;
            best = now;
            n += 1;
            swaps += rec.swapped_outer as u32;
            resamples += rec.resampled_trunc as u32;
        }
    }
    let swap = swaps as f64 / n as f64;
    let resample = resamples as f64 / n as f64;
    (
        (swap - 0.5).abs() <= 0.02 && (resample - 0.1).abs() <= 0.02 && copy_ok && best_ok,
        format!("{n} tournaments: swap {swap:.4}, resample {resample:.4}, loser copies winner {copy_ok}, best never worsens {best_ok}"),
    )
}

fn criterion_6() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bootstrap_config(0, dir.path());
    let zero = LearnedOptParams::zeros();
    let mut unchanged = true;
    for i in 0..20u64 {
        let task = std::sync::Arc::new(cfg.tasks.sample(rng::derive(5, &[i]), 500));
        let mut run = InnerRunState::new(task, i);
        let x0 = run.x.clone();
        for k in [1, 49, 450] {
            inner_loop::advance(&mut run, Optimizer::Learned(&zero), k, &cfg.norm);
            unchanged &= run.x == x0;
        }
    }
    let eval = population::eval_set(&cfg.tasks, 20, 500, 99);
    let score = population::score_theta(&zero, &eval, 500, &cfg.norm);
    (
        unchanged && (score - 1.0).abs() <= 0.05,
        format!("parameters unchanged over 500 steps on 20 tasks: {unchanged}; score {score:.4}"),
    )
}

fn criterion_7() -> Outcome {
    let read = |p: PathBuf| std::fs::read(p).unwrap();
    let ck = |d: &Path| d.join(checkpoint::FILE_NAME);

    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    commands::train(&small_config(a.path(), 100, 1), false).unwrap();
    commands::train(&small_config(a.path(), 100, 1), true).unwrap();
    let full = read(ck(a.path()));
    let run_a: Vec<Vec<u8>> = ["tournaments.csv", "scores.csv"].iter().map(|f| read(a.path().join(f))).collect();

    // same directory name is needed for byte equality, since the config is embedded
    let replay = tempfile::tempdir().unwrap();
    commands::train(&small_config(replay.path(), 100, 1), false).unwrap();
    let reproducible = Checkpoint::load(&ck(replay.path())).unwrap().members
        == Checkpoint::load(&ck(a.path())).unwrap().members
        && ["tournaments.csv", "scores.csv"].iter().zip(&run_a).all(|(f, bytes)| read(replay.path().join(f)) == *bytes);

    for f in ["checkpoint.ckpt", "tournaments.csv", "scores.csv"] {
        std::fs::remove_file(a.path().join(f)).unwrap();
    }
    commands::train(&small_config(a.path(), 50, 1), false).unwrap();
    commands::train(&small_config(a.path(), 100, 1), true).unwrap();
    let resumed = read(ck(a.path())) == full
        && ["tournaments.csv", "scores.csv"].iter().zip(&run_a).all(|(f, bytes)| read(a.path().join(f)) == *bytes);

    commands::train(&small_config(b.path(), 100, 8), false).unwrap();
    let ea = commands::evaluate(&ck(a.path()), MemberChoice::Best, 5, 60, 3, &a.path().join("e")).unwrap();
    let eb = commands::evaluate(&ck(b.path()), MemberChoice::Best, 5, 60, 3, &b.path().join("e")).unwrap();
    let workers =
        ea.summaries == eb.summaries && read(a.path().join("scores.csv")) == read(b.path().join("scores.csv"));

    (
        reproducible && resumed && workers,
        format!("repeat run identical {reproducible}; 50 + resume 50 == 100 bitwise {resumed}; workers 1 vs 8 identical scores {workers}"),
    )
}

fn criterion_8() -> Outcome {
    let grid = baselines::lr_sweep_grid();
    let exact = grid.len() == 15
        && grid.iter().enumerate().all(|(i, lr)| (lr / 10f64.powf(-6.0 + 0.5 * i as f64) - 1.0).abs() < 1e-12);
    let dir = tempfile::tempdir().unwrap();
    let cfg = bootstrap_config(0, dir.path());
    let mut dominated = true;
    let mut checked = 0;
    for fam in [
        tasks::TaskFamily::new(tasks::FamilyId::NoisyQuadratic, 2, 16).with_noise(0.01),
        tasks::TaskFamily::new(tasks::FamilyId::LinearRegression, 2, 16),
        tasks::TaskFamily::new(tasks::FamilyId::LogisticRegression, 2, 16),
        tasks::TaskFamily::new(tasks::FamilyId::TinyMlpClassification, 82, 82),
    ] {
        for s in 0..5 {
            let task = tasks::sample_task(&fam, s, 200);
            let (_, tuned) = baselines::tuned_adam(&task, 200, 1, &cfg.norm);
            let t = baselines::smoothed_final(&tuned);
            for lr in &grid {
                let c = inner_loop::train(&task, Optimizer::Adam(AdamConfig::new(*lr)), 200, 1, &cfg.norm);
                dominated &= t <= baselines::smoothed_final(&c);
                checked += 1;
            }
        }
    }
    (
        exact && dominated,
        format!("grid has {} values at half-decade spacing {exact}; tuned <= fixed on {checked} (task, lr) pairs {dominated}", grid.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 bootstrap feedback loop", criterion_1),
        ("2 ES fidelity", criterion_2),
        ("3 gradient oracles", criterion_3),
        ("4 Adam correctness", criterion_4),
        ("5 tournament statistics", criterion_5),
        ("6 zero-theta fixed point", criterion_6),
        ("7 determinism and resume", criterion_7),
        ("8 sweep grid", criterion_8),
    ];
    let only: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, f) in criteria {
        if only.as_ref().is_some_and(|o| !name.starts_with(o.as_str())) {
            continue;
        }
        let t = Instant::now();
        let (pass, detail) = f();
        println!(
            "criterion {name}: {} ({:.1}s)\n    {detail}",
            if pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
        failed += !pass as u32;
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
