//! Seed derivation for nested deterministic RNG streams.
//!
//! Every random choice in the crate draws from a ChaCha8 stream seeded via
//! `derive(master, &[tags...])`. Streams are identified by purpose tags plus
//! indices (view number, pair number, feature number, ...), never by call
//! order, so results do not depend on thread count or evaluation order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags. Keep values distinct; they are part of the reproducibility
/// contract for a given crate version.
pub mod tags {
    pub const NET_INIT: u64 = 0x01;
    pub const GAMMA_INIT: u64 = 0x02;
    pub const BATCH_SHUFFLE: u64 = 0x03;
    pub const PAIR_DRAW: u64 = 0x04;
    pub const PAIR_TRAIN: u64 = 0x05;
    pub const PERMUTE: u64 = 0x06;
    pub const SPLIT: u64 = 0x07;
    pub const SIM: u64 = 0x08;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a tag path into one sub-stream seed.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    let mut x = splitmix64(master);
    for &t in path {
        x = splitmix64(x ^ splitmix64(t));
    }
    x
}

/// ChaCha8 stream for `path` under `master`.
pub fn rng(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, path))
}
