//! Run configuration, read from a TOML file.
//!
//! ```toml
//! master_seed = 0
//! workers = 1
//! checkpoint_every = 1      # tournaments between checkpoints
//! out_dir = "runs/demo"
//!
//! [pbt]
//! pop_size = 4
//! tournament_interval = 20
//! eval_tasks = 20
//! eval_steps = 500
//! swap_prob = 0.5
//! trunc_resample_prob = 0.1
//! trunc_choices = [50, 100]
//! total_outer_steps = 2000
//! theta_init_scale = 0.01
//!
//! [pbt.pool]
//! size = 4
//! horizon = 2000
//!
//! [es]
//! sigma = 0.01
//! n_pairs = 8
//! clip = 1.0
//!
//! [norm]
//! delta = 1e-8
//! cap = 2.0
//!
//! [adam_defaults]
//! lr = 1e-3
//!
//! [[tasks]]
//! id = "NoisyQuadratic"
//! dim_min = 2
//! dim_max = 16
//! noise_scale = 0.01
//! weight = 1.0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::AdamConfig;
use crate::error::{Error, Result};
use crate::evaluation::NormalizationSpec;
use crate::outer_es::{EsConfig, OuterContext};
use crate::population::PbtConfig;
use crate::tasks::TaskDistribution;

pub const WORKERS_ENV: &str = "SELFOPT_WORKERS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub pbt: PbtConfig,
    #[serde(default)]
    pub es: EsConfig,
    pub tasks: TaskDistribution,
    #[serde(default)]
    pub norm: NormalizationSpec,
    #[serde(default)]
    pub adam_defaults: AdamConfig,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default = "one_u64")]
    pub checkpoint_every: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub master_seed: u64,
}

fn one() -> usize {
    1
}
fn one_u64() -> u64 {
    1
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|source| Error::ConfigFile { path: path.to_path_buf(), source })?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.pbt.validate()?;
        self.es.validate()?;
        self.tasks.validate()?;
        self.norm.validate()?;
        self.adam_defaults.validate()?;
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be >= 1".into()));
        }
        Ok(())
    }

    /// Worker count, honoring the `SELFOPT_WORKERS` override.
    pub fn effective_workers(&self) -> Result<usize> {
        match std::env::var(WORKERS_ENV) {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(n) if n >= 1 => Ok(n),
                _ => Err(Error::Config(format!("{WORKERS_ENV}={v:?} is not a positive integer"))),
            },
            Err(_) => Ok(self.workers),
        }
    }

    /// Digest of every setting that affects the trajectory. Stopping point,
    /// worker count, checkpoint cadence and output location are excluded, so
    /// a run can be extended or resumed elsewhere.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.pbt.total_outer_steps = 0;
        canon.workers = 1;
        canon.checkpoint_every = 1;
        canon.out_dir = PathBuf::new();
        let json = serde_json::to_vec(&canon).expect("config serializes");
        hex(&Sha256::digest(&json))
    }

    pub fn context(&self) -> OuterContext<'_> {
        OuterContext { dist: &self.tasks, es: &self.es, pool: &self.pbt.pool, norm: &self.norm }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"
master_seed = 3
out_dir = "out"

[pbt]
pop_size = 4
tournament_interval = 20
eval_tasks = 20
eval_steps = 500
trunc_choices = [50, 100]
total_outer_steps = 2000

[es]
n_pairs = 8

[[tasks]]
id = "NoisyQuadratic"
dim_min = 2
dim_max = 16

[[tasks]]
id = "LinearRegression"
dim_min = 2
dim_max = 16
noise_scale = 0.1
weight = 2.0
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = RunConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.pbt.swap_prob, 0.5);
        assert_eq!(cfg.pbt.trunc_resample_prob, 0.1);
        assert_eq!(cfg.pbt.pool.size, 4);
        assert_eq!(cfg.es.sigma, 0.01);
        assert_eq!(cfg.tasks.0[1].weight, 2.0);
        assert_eq!(cfg.tasks.0[0].family.batch_size, 32);
        assert_eq!(cfg.workers, 1);
        let again = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_invalid_values() {
        let bad = SAMPLE.replace("pop_size = 4", "pop_size = 1");
        assert!(matches!(RunConfig::from_toml(&bad), Err(Error::Config(_))));
        let bad = SAMPLE.replace("n_pairs = 8", "n_pairs = 8\nbogus = 1");
        assert!(RunConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn hash_ignores_stopping_point_only() {
        let a = RunConfig::from_toml(SAMPLE).unwrap();
        let mut b = a.clone();
        b.pbt.total_outer_steps = 10;
        b.workers = 8;
        assert_eq!(a.hash(), b.hash());
        b.es.sigma = 0.02;
        assert_ne!(a.hash(), b.hash());
    }
}
