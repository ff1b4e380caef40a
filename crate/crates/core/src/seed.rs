//! Counter-based seed derivation.
//!
//! Every random stream in a simulation is addressed by a path of integers
//! (grid point, trial, purpose, round, ...) hashed together with the base
//! seed. Two runs that walk the same path see the same stream regardless of
//! evaluation order, thread count, or how many readers sense the channel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `path` into `base`.
pub fn derive(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p.wrapping_add(GOLDEN))))
}

pub fn rng_for(base: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, path))
}

/// Stream purposes inside one trial.
pub mod stream {
    pub const POPULATION: u64 = 1;
    pub const MISSING: u64 = 2;
    pub const PHASE1: u64 = 3;
    pub const PHASE2: u64 = 4;
    pub const ESTIMATE: u64 = 5;
    pub const COVERAGE: u64 = 6;
}

/// An unbounded sequence of per-round seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    base: u64,
}

impl SeedStream {
    pub fn new(base: u64) -> Self {
        SeedStream { base }
    }

    pub fn seed(&self, round: u32) -> u64 {
        derive(self.base, &[round as u64])
    }
}
