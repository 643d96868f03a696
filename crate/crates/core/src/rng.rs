//! Deterministic RNG substreams.
//!
//! Every stochastic operation takes an explicit `(master seed, purpose tag,
//! index)` triple and derives an independent ChaCha12 stream from it. Parallel
//! units (bootstrap replicates, permutations, power-study cells) each derive
//! their own stream up front, so results are identical regardless of
//! scheduling or thread count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Purpose tags keep unrelated substreams of the same master seed disjoint.
pub mod tag {
    pub const CONTEXTS: u64 = 0x01;
    pub const OUTCOME: u64 = 0x02;
    pub const SHOCKS: u64 = 0x03;
    pub const REPORT: u64 = 0x04;
    pub const BOOTSTRAP: u64 = 0x05;
    pub const PERMUTATION: u64 = 0x06;
    pub const FOLDS: u64 = 0x07;
    pub const BAGGING: u64 = 0x08;
    pub const NET_GEN: u64 = 0x09;
    pub const RETRY_JITTER: u64 = 0x0a;
    pub const POWER_CELL: u64 = 0x0b;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive an independent RNG for `(seed, tag, index)`.
pub fn substream(seed: u64, tag: u64, index: u64) -> ChaCha12Rng {
    let mut state = seed ^ 0xa076_1d64_78bd_642f;
    let a = splitmix64(&mut state);
    state ^= tag.wrapping_mul(0xe703_7ed1_a0b4_28db);
    let b = splitmix64(&mut state);
    state ^= index.wrapping_mul(0x8ebc_6af0_9c88_c6e3);
    let c = splitmix64(&mut state);
    let d = splitmix64(&mut state);

    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&a.to_le_bytes());
    key[8..16].copy_from_slice(&b.to_le_bytes());
    key[16..24].copy_from_slice(&c.to_le_bytes());
    key[24..32].copy_from_slice(&d.to_le_bytes());
    ChaCha12Rng::from_seed(key)
}
