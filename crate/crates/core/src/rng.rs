//! Counter-based seed derivation.
//!
//! Every random draw in the system comes from a `ChaCha8Rng` seeded by
//! [`derive`]`(parent, [purpose, a, b, ...])`. Streams are keyed by purpose
//! and indices (member, step, slot), so no generator is ever shared between
//! workers and the only "RNG state" a checkpoint needs is the master seed
//! plus the counters already stored in the population.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream purposes. Values are part of the on-disk determinism contract.
pub mod purpose {
    pub const MEMBER: u64 = 1;
    pub const THETA_INIT: u64 = 2;
    pub const POPULATION_INIT: u64 = 3;
    pub const POOL_TASK: u64 = 4;
    pub const ES: u64 = 5;
    pub const TOURNAMENT: u64 = 6;
    pub const EVAL: u64 = 7;
    pub const TASK_PAYLOAD: u64 = 8;
    pub const PARAM_INIT: u64 = 9;
    pub const BATCH: u64 = 10;
    pub const GRAD_NOISE: u64 = 11;
    pub const BASELINE: u64 = 12;
    pub const FAMILY_PICK: u64 = 13;
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

pub fn stream(seed: u64, parts: &[u64]) -> Rng {
    Rng::seed_from_u64(derive(seed, parts))
}
