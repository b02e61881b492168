//! Seed derivation. Every random stream in the crate is a ChaCha generator
//! seeded from a value computed here, so results never depend on thread
//! scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Combines a base seed with a string key and integer parts.
pub fn derive(base: u64, key: &str, parts: &[u64]) -> u64 {
    let mut h = splitmix64(base ^ fnv1a(key.as_bytes()));
    for &p in parts {
        h = splitmix64(h ^ p);
    }
    h
}
