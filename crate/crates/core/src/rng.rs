//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator seeded from
//! a 64-bit value. Independent streams are derived from a master seed and a
//! tuple of indices by mixing, so the stream for replicate `r` does not
//! depend on how many other replicates ran before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type HiveRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> HiveRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the stream identified by `path` under `master`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &idx| {
        splitmix64(acc ^ splitmix64(idx.wrapping_add(0x632b_e59b_d9b4_e019)))
    })
}

pub fn derived_rng(master: u64, path: &[u64]) -> HiveRng {
    rng_from_seed(derive_seed(master, path))
}
