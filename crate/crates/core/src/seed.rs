//! Child-seed derivation.
//!
//! Every random stream in a run is keyed by `(experiment seed, purpose, ids…)`
//! so results never depend on the order in which clients are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stable across platforms and releases (no std `Hasher`).
pub fn derive_seed(base: u64, tag: &str, ids: &[u64]) -> u64 {
    // FNV-1a over the tag
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut state = splitmix64(base ^ splitmix64(h));
    for &id in ids {
        state = splitmix64(state ^ splitmix64(id.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    state
}

pub fn rng_for(base: u64, tag: &str, ids: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag, ids))
}
