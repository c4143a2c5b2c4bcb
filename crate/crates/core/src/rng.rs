//! Named random substreams.
//!
//! Every consumer of randomness draws from its own stream, keyed by the run
//! seed and a stable name: the stream is ChaCha8 seeded with
//! `SHA-256(seed as little-endian u64 || name)`. Adding a new consumer never
//! perturbs the draws of existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn digest(seed: u64, name: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let mut out = [0u8; 32];
    out.copy_from_slice(&h.finalize());
    out
}

pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(digest(seed, name))
}

/// A child seed, for records that carry their own seed.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    let d = digest(seed, name);
    u64::from_le_bytes(d[..8].try_into().unwrap()) >> 1
}
