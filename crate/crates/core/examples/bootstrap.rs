//! Desk-scale bootstrap run, printing population scores at each tournament.
//!
//! cargo run --release --example bootstrap -- [master_seed] [total_steps] [init_scale]

use std::time::Instant;

use selfopt::evaluation::NormalizationSpec;
use selfopt::outer_es::{EsConfig, OuterContext, PoolConfig};
use selfopt::population::{init_population, PbtConfig, RunObserver, ScoreRecord, TournamentRecord};
use selfopt::tasks::{FamilyId, TaskDistribution, TaskFamily};

struct Printer(Instant);

impl RunObserver for Printer {
    fn on_scores(&mut self, scores: &[ScoreRecord]) -> selfopt::Result<()> {
        let s: Vec<String> = scores.iter().map(|r| format!("{:.3}", r.score)).collect();
        let best = scores.iter().map(|r| r.score).fold(f64::INFINITY, f64::min);
        println!(
            "[{:>7.1}s] step {:>5}  best {:.4}  scores [{}]",
            self.0.elapsed().as_secs_f64(),
            scores[0].outer_step,
            best,
            s.join(", ")
        );
        Ok(())
    }

    fn on_tournament(&mut self, r: &TournamentRecord) -> selfopt::Result<()> {
        println!(
            "           tournament {:?} winner {} swap {} resample {}",
            r.contestants, r.winner, r.swapped_outer, r.resampled_trunc
        );
        Ok(())
    }

    fn on_checkpoint(&mut self, pop: &selfopt::population::Population) -> selfopt::Result<()> {
        let rms: Vec<String> = pop
            .members
            .iter()
            .map(|m| {
                let t = m.theta.as_slice();
                format!("{:.3}", (t.iter().map(|v| v * v).sum::<f64>() / t.len() as f64).sqrt())
            })
            .collect();
        let outer: Vec<usize> = pop.members.iter().map(|m| m.outer_opt_idx).collect();
        println!("           theta rms [{}] outer {outer:?}", rms.join(", "));
        Ok(())
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let total: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let scale: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let cfg = PbtConfig {
        pop_size: 4,
        tournament_interval: 20,
        eval_tasks: 20,
        eval_steps: 500,
        swap_prob: 0.5,
        trunc_resample_prob: 0.1,
        trunc_choices: vec![50, 100],
        total_outer_steps: total,
        theta_init_scale: scale,
        score_all: true,
        pool: PoolConfig::default(),
        tournament_every_secs: None,
    };
    let dist = TaskDistribution::uniform([
        TaskFamily::new(FamilyId::NoisyQuadratic, 2, 16).with_noise(0.01),
        TaskFamily::new(FamilyId::LinearRegression, 2, 16).with_noise(0.1),
    ]);
    let es = EsConfig { sigma: 0.01, n_pairs: 8, clip: 1.0 };
    let norm = NormalizationSpec::default();
    let ctx = OuterContext { dist: &dist, es: &es, pool: &cfg.pool, norm: &norm };
    let mut pop = init_population(&cfg, seed);
    pop.run_until(&cfg, &ctx, total, &mut Printer(Instant::now())).unwrap();
}
