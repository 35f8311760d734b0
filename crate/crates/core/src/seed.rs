//! Seed derivation. Every stochastic task gets `derive(seed, path)`, where `path`
//! names the stage and task (for example `["cluster", "k=3", "restart=7"]`).
//! The derived value is the first 8 bytes (little endian) of
//! `SHA-256(seed_le || 0x1f || part_0 || 0x1f || part_1 ...)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive(seed: u64, path: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for part in path {
        hasher.update([0x1f]);
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
