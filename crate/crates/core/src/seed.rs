//! Deterministic seed derivation.
//!
//! Every random stream in the crate (init, ray jitter, batch selection,
//! pose sampling) is keyed off a master seed plus a stream tag, so whole
//! runs replay bit-identically regardless of thread count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; good avalanche for combining tags.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed and a list of stream tags.
pub fn derive(base: u64, tags: &[u64]) -> u64 {
    let mut state = mix(base);
    for &t in tags {
        state = mix(state ^ mix(t));
    }
    state
}

/// Tag helper for named streams.
pub fn tag(name: &str) -> u64 {
    let mut state = 0xcbf2_9ce4_8422_2325u64;
    for b in name.as_bytes() {
        state ^= u64::from(*b);
        state = state.wrapping_mul(0x0000_0100_0000_01b3);
    }
    state
}

/// A seeded ChaCha stream; cheap to construct per ray or per step.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
