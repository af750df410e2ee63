//! Seed derivation.
//!
//! Every random stream in a run is keyed by the run seed plus a path of
//! integers (purpose tag, client id, iteration, ...). Streams never depend on
//! scheduling, so parallel and sequential execution draw identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `path` into `base` to obtain an independent child seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_from(base: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, path))
}

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Purpose tags for derived streams.
pub mod tag {
    pub const PARTITION: u64 = 1;
    pub const INITIAL_LABELS: u64 = 2;
    pub const MODEL_INIT: u64 = 3;
    pub const FED_TRAIN: u64 = 4;
    pub const SCORING: u64 = 5;
    pub const RANDOM_QUOTA: u64 = 6;
    pub const DATA_CENTERS: u64 = 7;
    pub const DATA_TRAIN: u64 = 8;
    pub const DATA_TEST: u64 = 9;
}
