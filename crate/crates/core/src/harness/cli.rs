//! Command-line front end.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use super::checkpoint;
use super::commands::{self, Comparison, MemberChoice};
use super::config::RunConfig;
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "selfopt", version, about = "Train a population of learned optimizers that train each other")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a population, or continue one with --resume.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        resume: bool,
    },
    /// Compare one member against Adam baselines on fresh tasks.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Member id, or `best`.
        #[arg(long)]
        member: MemberChoice,
        #[arg(long)]
        tasks: usize,
        #[arg(long)]
        steps: u64,
        #[arg(long)]
        seed: u64,
        /// Defaults to `eval/` next to the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fixed-lr sweep and per-task tuned Adam.
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        tasks: usize,
        #[arg(long)]
        steps: u64,
    },
    /// Learning curves of every member on the run's score protocol.
    ExportCurves {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn print_summary(cmp: &Comparison) {
    println!("optimizer_id,final_mean_score,beat_tuned_fraction");
    for s in &cmp.summaries {
        println!("{},{},{}", s.optimizer_id, s.final_mean_score, s.beat_tuned_fraction);
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, resume } => {
            let cfg = RunConfig::load(&config)?;
            let pop = commands::train(&cfg, resume)?;
            let ckpt = cfg.out_dir.join(checkpoint::FILE_NAME);
            match pop.best_member() {
                Some(id) => println!(
                    "outer step {}: best member {id} score {}; checkpoint {}",
                    pop.outer_step,
                    pop.members[id].last_score.unwrap_or(f64::NAN),
                    ckpt.display()
                ),
                None => println!("outer step {}: checkpoint {}", pop.outer_step, ckpt.display()),
            }
        }
        Command::Evaluate { checkpoint, member, tasks, steps, seed, out } => {
            let out = out.unwrap_or_else(|| {
                checkpoint.parent().map(|p| p.join("eval")).unwrap_or_else(|| PathBuf::from("eval"))
            });
            let cmp = commands::evaluate(&checkpoint, member, tasks, steps, seed, &out)?;
            print_summary(&cmp);
        }
        Command::Baseline { config, tasks, steps } => {
            let cfg = RunConfig::load(&config)?;
            let report = commands::baseline(&cfg, tasks, steps)?;
            for r in &report.sweep {
                println!("lr {:e}: score {}", r.lr, r.score);
            }
            println!("median fixed-lr score {}", report.median_fixed_score());
        }
        Command::ExportCurves { checkpoint, out } => {
            let cmp = commands::export_curves(&checkpoint, &out)?;
            print_summary(&cmp);
        }
    }
    Ok(())
}
