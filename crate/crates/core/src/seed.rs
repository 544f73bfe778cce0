//! Seed derivation.
//!
//! Every random decision in the crate is driven by a `ChaCha8Rng` seeded from
//! a 64-bit value. Child seeds are derived from a parent seed and a list of
//! integer labels by folding each label through the SplitMix64 finalizer:
//!
//! ```text
//! s = splitmix(parent ^ 0x9e3779b97f4a7c15)
//! for label in labels { s = splitmix(s ^ splitmix(label + 0x632be59bd9b4e019)) }
//! ```
//!
//! The result depends only on the inputs, never on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `parent` and a path of labels.
pub fn derive(parent: u64, labels: &[u64]) -> u64 {
    labels.iter().fold(splitmix(parent ^ 0x9e37_79b9_7f4a_7c15), |s, &l| {
        splitmix(s ^ splitmix(l.wrapping_add(0x632b_e59b_d9b4_e019)))
    })
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream labels so that seeds drawn for different purposes never collide.
pub mod stream {
    pub const WORLD: u64 = 1;
    pub const PAIRS: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const EXPERT: u64 = 4;
    pub const INIT: u64 = 5;
    pub const SHUFFLE: u64 = 6;
    pub const LEARNER: u64 = 7;
    pub const ORACLE: u64 = 8;
    pub const BOOTSTRAP: u64 = 9;
    pub const GRADCHECK: u64 = 10;
}
