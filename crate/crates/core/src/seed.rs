//! Seed derivation and hashing helpers shared by every seeded component.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Mixes a base seed with a path of sub-indices into a new seed.
///
/// Uses splitmix64 finalisation on each step so neighbouring indices land far
/// apart.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut state = splitmix(base ^ 0x6a09_e667_f3bc_c909);
    for &p in path {
        state = splitmix(state ^ splitmix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    state
}

/// Seed derived from a base seed and a string label (e.g. an attribute name).
pub fn derive_seed_str(base: u64, label: &str) -> u64 {
    let digest = Sha256::digest(label.as_bytes());
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    derive_seed(base, &[u64::from_le_bytes(word)])
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
