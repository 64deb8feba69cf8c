//! Deterministic seed derivation.
//!
//! Every random decision in an experiment is driven by a sub-seed derived
//! from the single experiment seed plus a stream tag and context indices
//! (round, client, cloud). The mixer is a fixed splitmix64 chain, so derived
//! seeds are stable across platforms and releases, unlike `DefaultHasher`.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keeping independent random decisions on disjoint seeds.
pub mod stream {
    pub const DATA: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const PARTITION: u64 = 3;
    pub const REFERENCE: u64 = 4;
    pub const MALICIOUS: u64 = 5;
    pub const LABEL_FLIP: u64 = 6;
    pub const MODEL_INIT: u64 = 7;
    pub const TRAIN: u64 = 8;
    pub const ATTACK: u64 = 9;
    pub const SELECT: u64 = 10;
    pub const REF_TRAIN: u64 = 11;
    pub const SHAPLEY: u64 = 12;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a sub-seed from a base seed and a context word list.
pub fn derive(base: u64, words: &[u64]) -> u64 {
    let mut state = splitmix64(base);
    for &w in words {
        state = splitmix64(state ^ w.wrapping_mul(0xff51_afd7_ed55_8ccd));
    }
    state
}

/// Deterministic RNG for a derived seed.
pub fn rng(base: u64, words: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, words))
}
