//! Seed derivation.
//!
//! Every random stream in the toolkit is a ChaCha8 generator seeded from a
//! `u64`. Child streams (per task, per respondent, per restart) are derived
//! from a parent seed and an index with [`derive`], so a run can be split
//! across threads and still produce exactly the serial output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed number `index` of `parent`.
///
/// `derive(s, i) = mix(mix(s) + (i + 1) * 0x9e3779b97f4a7c15)`. Distinct
/// indices under one parent never collide, and children of different parents
/// collide only by chance.
pub fn derive(parent: u64, index: u64) -> u64 {
    mix(mix(parent).wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

/// Child seed for a named stream, e.g. `derive_named(master, "simulate")`.
pub fn derive_named(parent: u64, name: &str) -> u64 {
    // FNV-1a over the label keeps this independent of std's hasher.
    let tag = name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    });
    derive(parent, tag)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
