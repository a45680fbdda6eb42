//! Seeded, counter-addressed random streams.
//!
//! Every draw in the crate comes from a `SplitMix64` generator (64-bit state)
//! whose seed is derived from `(seed, stream, index)`. Row `i` of a dataset
//! therefore gets the same numbers no matter how rows are scheduled.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::SplitMix64;

/// Name of the generator algorithm, echoed into manifests.
pub const ALGORITHM: &str = "splitmix64";

pub type Rng = SplitMix64;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for item `index` of the named `stream` under `seed`.
pub fn stream(seed: u64, stream: u64, index: u64) -> Rng {
    SplitMix64::seed_from_u64(mix(mix(mix(seed) ^ stream) ^ index))
}

/// Stream tags. Distinct constants keep unrelated draws independent.
pub mod tags {
    pub const FLOW: u64 = 0x11;
    pub const PAD: u64 = 0x12;
    pub const DATA_ROW: u64 = 0x21;
    pub const SPLIT: u64 = 0x22;
    pub const INIT: u64 = 0x31;
    pub const SHUFFLE: u64 = 0x32;
    pub const TRAIN_NOISE: u64 = 0x33;
    pub const VAL_NOISE: u64 = 0x34;
    pub const EVAL_NOISE: u64 = 0x41;
    pub const LOGLIK: u64 = 0x42;
    pub const GENERATE: u64 = 0x51;
}

pub fn normals(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Fisher-Yates permutation of `0..n`.
pub fn permutation(rng: &mut Rng, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}
