//! Population checkpoints.
//!
//! A checkpoint is one text file:
//!
//! ```text
//! SELFOPT-CHECKPOINT
//! version: 1
//! sha256: <hex digest of the body>
//! <JSON body>
//! ```
//!
//! Real arrays in the body are base64 of little-endian `f64` bytes and
//! optional scalars are stored as raw bit patterns, so a save/load/save
//! cycle reproduces the file byte for byte. Inner-run tasks are not stored;
//! they are regenerated from their seeds on restore.

use std::path::Path;
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{hex, RunConfig};
use crate::error::{Error, Result};
use crate::inner_loop::InnerRunState;
use crate::learned_opt::{LearnedOptParams, OptimizerState};
use crate::outer_es::{self, OuterContext, PoolRun};
use crate::population::{Population, PopulationMember};
use crate::tasks::ParamVector;

pub const MAGIC: &str = "SELFOPT-CHECKPOINT";
pub const VERSION: u32 = 1;
pub const FILE_NAME: &str = "checkpoint.ckpt";

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(text: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD.decode(text).map_err(|e| Error::Malformed(format!("base64: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Malformed("real array length is not a multiple of 8 bytes".into()));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    pub m1: String,
    pub m2: String,
    pub m3: String,
    pub v: String,
    pub t: u64,
}

impl StateRecord {
    fn from_state(s: &OptimizerState) -> Self {
        StateRecord { m1: encode(&s.m1), m2: encode(&s.m2), m3: encode(&s.m3), v: encode(&s.v), t: s.t }
    }

    fn to_state(&self) -> Result<OptimizerState> {
        let s = OptimizerState {
            m1: decode(&self.m1)?,
            m2: decode(&self.m2)?,
            m3: decode(&self.m3)?,
            v: decode(&self.v)?,
            t: self.t,
        };
        let n = s.m1.len();
        if s.m2.len() != n || s.m3.len() != n || s.v.len() != n {
            return Err(Error::Malformed("optimizer state vectors differ in length".into()));
        }
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub slot: u64,
    pub generation: u64,
    pub seed: u64,
    pub step: u64,
    pub diverged_at: Option<u64>,
    pub x: String,
    pub opt_state: StateRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberRecord {
    pub id: usize,
    pub theta: String,
    pub outer_opt_idx: usize,
    pub outer_state: StateRecord,
    pub truncation: u64,
    pub pool_stale: bool,
    pub rng_seed: u64,
    pub outer_step_count: u64,
    /// `f64::to_bits` of the last logged score.
    pub last_score_bits: Option<u64>,
    pub run_pool: Vec<RunRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub config: RunConfig,
    pub master_seed: u64,
    pub outer_step: u64,
    /// Data rows in `tournaments.csv` / `scores.csv` covered by this
    /// checkpoint; later rows are discarded on resume.
    pub tournament_rows: u64,
    pub score_rows: u64,
    pub members: Vec<MemberRecord>,
}

impl Checkpoint {
    pub fn capture(pop: &Population, config: &RunConfig, tournament_rows: u64, score_rows: u64) -> Self {
        let members = pop
            .members
            .iter()
            .map(|m| MemberRecord {
                id: m.id,
                theta: encode(m.theta.as_slice()),
                outer_opt_idx: m.outer_opt_idx,
                outer_state: StateRecord::from_state(&m.outer_state),
                truncation: m.truncation,
                pool_stale: m.pool_stale,
                rng_seed: m.rng_seed,
                outer_step_count: m.outer_step_count,
                last_score_bits: m.last_score.map(f64::to_bits),
                run_pool: m
                    .run_pool
                    .iter()
                    .map(|p| RunRecord {
                        slot: p.slot,
                        generation: p.generation,
                        seed: p.run.seed,
                        step: p.run.step,
                        diverged_at: p.run.diverged_at,
                        x: encode(&p.run.x),
                        opt_state: StateRecord::from_state(&p.run.opt_state),
                    })
                    .collect(),
            })
            .collect();
        Checkpoint {
            config_hash: config.hash(),
            config: config.clone(),
            master_seed: pop.master_seed,
            outer_step: pop.outer_step,
            tournament_rows,
            score_rows,
            members,
        }
    }

    /// θ of the member at index `idx`, without rebuilding any run pools.
    pub fn member_theta(&self, idx: usize) -> Result<LearnedOptParams> {
        let rec = &self.members[idx];
        LearnedOptParams::from_vec(decode(&rec.theta)?).map_err(|e| Error::Malformed(format!("member {}: {e}", rec.id)))
    }

    /// Rebuilds the population, regenerating each run's task.
    pub fn restore(&self, ctx: &OuterContext<'_>) -> Result<Population> {
        let mut members = Vec::with_capacity(self.members.len());
        for rec in &self.members {
            let theta = LearnedOptParams::from_vec(decode(&rec.theta)?)
                .map_err(|e| Error::Malformed(format!("member {}: {e}", rec.id)))?;
            let mut run_pool = Vec::with_capacity(rec.run_pool.len());
            for r in &rec.run_pool {
                let task_seed = outer_es::pool_task_seed(rec.rng_seed, r.slot, r.generation);
                let task = Arc::new(ctx.dist.sample(task_seed, ctx.pool.horizon));
                let x = ParamVector(decode(&r.x)?);
                let opt_state = r.opt_state.to_state()?;
                if x.len() != task.param_dim || opt_state.len() != task.param_dim {
                    return Err(Error::Malformed(format!("member {} slot {}: run size mismatch", rec.id, r.slot)));
                }
                let run = InnerRunState { task, x, opt_state, step: r.step, seed: r.seed, diverged_at: r.diverged_at };
                run_pool.push(PoolRun { slot: r.slot, generation: r.generation, run });
            }
            members.push(PopulationMember {
                id: rec.id,
                theta,
                outer_opt_idx: rec.outer_opt_idx,
                outer_state: rec.outer_state.to_state()?,
                truncation: rec.truncation,
                run_pool,
                pool_stale: rec.pool_stale,
                rng_seed: rec.rng_seed,
                outer_step_count: rec.outer_step_count,
                last_score: rec.last_score_bits.map(f64::from_bits),
            });
        }
        Ok(Population { master_seed: self.master_seed, outer_step: self.outer_step, members })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let body = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        let digest = hex(&Sha256::digest(body.as_bytes()));
        format!("{MAGIC}\nversion: {VERSION}\nsha256: {digest}\n{body}").into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|_| Error::Checksum)?;
        let mut parts = text.splitn(4, '\n');
        let magic = parts.next().ok_or(Error::Checksum)?;
        if magic != MAGIC {
            return Err(Error::Malformed("not a selfopt checkpoint".into()));
        }
        let version: u32 = parts
            .next()
            .and_then(|l| l.strip_prefix("version: "))
            .and_then(|v| v.trim().parse().ok())
            .ok_or(Error::Checksum)?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let digest = parts.next().and_then(|l| l.strip_prefix("sha256: ")).ok_or(Error::Checksum)?;
        let body = parts.next().ok_or(Error::Checksum)?;
        if hex(&Sha256::digest(body.as_bytes())) != digest {
            return Err(Error::Checksum);
        }
        serde_json::from_str(body).map_err(|e| Error::Malformed(e.to_string()))
    }

    /// Writes atomically (temp file + rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn real_arrays_round_trip_bitwise(v in prop::collection::vec(any::<f64>(), 0..64)) {
            let back = decode(&encode(&v)).unwrap();
            prop_assert_eq!(
                back.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                v.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn rejects_bad_base64_length() {
        assert!(decode(&STANDARD.encode([1u8, 2, 3])).is_err());
    }
}
