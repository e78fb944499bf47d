//! Labeled random streams.
//!
//! Every stochastic stage draws from its own stream, keyed by the master seed,
//! a stage label and an index (shard, tree, replicate). Adding a stage never
//! shifts another stage's randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Deterministic sub-seed for `(master, label, index)`.
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update([0u8]);
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

/// RNG seeded directly from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// RNG for the labeled stream `(master, label, index)`.
pub fn stream_rng(master: u64, label: &str, index: u64) -> ChaCha8Rng {
    rng_from_seed(derive_seed(master, label, index))
}
