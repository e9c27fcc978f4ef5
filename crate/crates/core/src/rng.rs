//! Seeded randomness shared by initialization, data synthesis and sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Deterministic generator for `seed`.
pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// FNV-1a over the label, mixed with `seed`. Used to give every named
/// parameter its own stream so its initial value does not depend on which
/// other parameters exist.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(label.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Generator for a labelled sub-stream of `seed`.
pub fn substream(seed: u64, label: &str) -> Rng {
    seeded(derive_seed(seed, label))
}
