//! Seed-stream helpers.
//!
//! Every random decision in the crate derives from a `(seed, tag)` pair via a
//! fixed-algorithm generator (ChaCha8), so runs are reproducible across
//! platforms and independent of iteration order elsewhere.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG for a named stream of a run seed.
pub fn stream(seed: u64, tag: &str) -> ChaCha8Rng {
    // FNV-1a over the tag keeps distinct streams decorrelated.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in tag.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

/// Deterministic RNG for one item of a named stream (e.g. one video).
pub fn item_stream(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    let mut rng = stream(seed.wrapping_add(index.wrapping_mul(0x9e3779b97f4a7c15)), tag);
    // burn a word so adjacent indices diverge immediately
    use rand::RngCore;
    rng.next_u64();
    rng
}
