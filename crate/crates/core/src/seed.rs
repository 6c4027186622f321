//! Deterministic seed fan-out.
//!
//! A single master seed derives independent, named RNG streams so that
//! changing one consumer (say, the ensemble size) never perturbs the draws
//! seen by another (say, the truth trajectory). Streams are ChaCha8, which
//! is platform-independent, so fixed seeds reproduce bit-identical runs
//! everywhere.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the purpose tag; cheap and stable.
fn hash_tag(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed identified by `(purpose, index)` from a master seed.
pub fn derive(master: u64, purpose: &str, index: u64) -> u64 {
    splitmix64(master ^ hash_tag(purpose)).wrapping_add(splitmix64(index))
}

/// Derives the RNG stream identified by `(purpose, index)` from a master seed.
pub fn stream(master: u64, purpose: &str, index: u64) -> ChaCha8Rng {
    let mixed = derive(master, purpose, index);
    let mut key = [0u8; 32];
    let mut state = splitmix64(mixed);
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
