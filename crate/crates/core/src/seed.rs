//! Reproducible per-trial random streams.
//!
//! Trial `i` of an experiment with master seed `s` draws from a ChaCha8
//! generator seeded with `mix(s, i)`, where `mix` is one SplitMix64 round
//! applied to `s + (i + 1) * 0x9E3779B97F4A7C15`. The mapping is fixed so
//! that reports remain comparable across releases and across any degree of
//! parallelism.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type TrialRng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed of `master` for stream `index`.
#[inline]
pub fn mix(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

pub fn rng_from_seed(seed: u64) -> TrialRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn trial_rng(master: u64, trial: u64) -> TrialRng {
    rng_from_seed(mix(master, trial))
}
