//! CSV emission. Values are written with Rust's shortest round-trip float
//! formatting, so files parse back to the exact logged numbers.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::baselines::SweepResult;
use crate::error::{Error, Result};
use crate::evaluation::OptimizerSummary;
use crate::inner_loop::LearningCurve;
use crate::population::{ScoreRecord, TournamentRecord};

pub const TOURNAMENTS_HEADER: &str = "step,id_a,id_b,score_a,score_b,winner,swapped,resampled";
pub const SCORES_HEADER: &str = "outer_step,member_id,score,truncation,outer_opt_idx";
pub const SWEEP_HEADER: &str = "lr,step,mean_normalized";
pub const TUNED_HEADER: &str = "task_seed,best_lr,final_loss";
pub const SUMMARY_HEADER: &str = "optimizer_id,final_mean_score,beat_tuned_fraction";
pub const MEAN_CURVES_HEADER: &str = "optimizer_id,step,mean_normalized";
pub const CURVES_HEADER: &str = "run_id,step,loss,normalized";

/// An append-only CSV file that counts its data rows.
#[derive(Debug)]
pub struct CsvLog {
    path: PathBuf,
    file: File,
    rows: u64,
}

impl CsvLog {
    /// Starts a fresh file containing only the header.
    pub fn create(path: &Path, header: &str) -> Result<Self> {
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(file, "{header}").map_err(|e| Error::io(path, e))?;
        Ok(CsvLog { path: path.to_path_buf(), file, rows: 0 })
    }

    /// Reopens an existing log for appending, dropping every data row past
    /// the first `keep`. A missing file is an error unless `keep == 0`.
    pub fn resume(path: &Path, header: &str, keep: u64) -> Result<Self> {
        let mut kept = Vec::new();
        match File::open(path) {
            Ok(f) => {
                let mut lines = BufReader::new(f).lines();
                match lines.next() {
                    Some(Ok(h)) if h == header => {}
                    _ => return Err(Error::Malformed(format!("{}: unexpected header", path.display()))),
                }
                for line in lines.take(keep as usize) {
                    kept.push(line.map_err(|e| Error::io(path, e))?);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound && keep == 0 => {}
            Err(e) => return Err(Error::io(path, e)),
        }
        if kept.len() as u64 != keep {
            return Err(Error::Malformed(format!(
                "{}: has {} rows, checkpoint expects {keep}",
                path.display(),
                kept.len()
            )));
        }
        let mut log = Self::create(path, header)?;
        for row in &kept {
            log.push_line(row)?;
        }
        Ok(log)
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    fn push_line(&mut self, line: &str) -> Result<()> {
        writeln!(self.file, "{line}").map_err(|e| Error::io(&self.path, e))?;
        self.rows += 1;
        Ok(())
    }

    pub fn push(&mut self, fields: &[String]) -> Result<()> {
        self.push_line(&fields.join(","))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.file.flush().map_err(|e| Error::io(&self.path, e))?;
        self.file.sync_data().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn tournament_row(r: &TournamentRecord) -> Vec<String> {
    vec![
        r.step.to_string(),
        r.contestants.0.to_string(),
        r.contestants.1.to_string(),
        r.scores.0.to_string(),
        r.scores.1.to_string(),
        r.winner.to_string(),
        r.swapped_outer.to_string(),
        r.resampled_trunc.to_string(),
    ]
}

pub fn score_row(r: &ScoreRecord) -> Vec<String> {
    vec![
        r.outer_step.to_string(),
        r.member_id.to_string(),
        r.score.to_string(),
        r.truncation.to_string(),
        r.outer_opt_idx.to_string(),
    ]
}

fn write_all(path: &Path, header: &str, rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut log = CsvLog::create(path, header)?;
    for row in rows {
        log.push(&row)?;
    }
    log.flush()
}

pub fn write_sweep(path: &Path, results: &[SweepResult]) -> Result<()> {
    write_all(
        path,
        SWEEP_HEADER,
        results.iter().flat_map(|r| {
            r.mean_normalized
                .iter()
                .enumerate()
                .map(move |(step, v)| vec![r.lr.to_string(), step.to_string(), v.to_string()])
        }),
    )
}

/// Rows of `(task_seed, best_lr, final_loss)`.
pub fn write_tuned(path: &Path, rows: &[(u64, f64, f64)]) -> Result<()> {
    write_all(path, TUNED_HEADER, rows.iter().map(|(s, lr, l)| vec![s.to_string(), lr.to_string(), l.to_string()]))
}

pub fn write_summary(path: &Path, summaries: &[OptimizerSummary]) -> Result<()> {
    write_all(
        path,
        SUMMARY_HEADER,
        summaries
            .iter()
            .map(|s| vec![s.optimizer_id.clone(), s.final_mean_score.to_string(), s.beat_tuned_fraction.to_string()]),
    )
}

pub fn write_mean_curves(path: &Path, summaries: &[OptimizerSummary]) -> Result<()> {
    write_all(
        path,
        MEAN_CURVES_HEADER,
        summaries.iter().flat_map(|s| {
            s.mean_curve
                .iter()
                .enumerate()
                .map(move |(step, v)| vec![s.optimizer_id.clone(), step.to_string(), v.to_string()])
        }),
    )
}

/// One row per recorded step; runs are named `<optimizer>/<task index>`.
pub fn write_curves(path: &Path, curves: &BTreeMap<String, Vec<LearningCurve>>) -> Result<()> {
    write_all(
        path,
        CURVES_HEADER,
        curves.iter().flat_map(|(id, cs)| {
            cs.iter().enumerate().flat_map(move |(i, c)| {
                c.losses.iter().zip(&c.normalized).enumerate().map(move |(step, (l, n))| {
                    vec![format!("{id}/{i}"), step.to_string(), l.to_string(), n.to_string()]
                })
            })
        }),
    )
}
