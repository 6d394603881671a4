//! Seeded random streams.
//!
//! Every stochastic consumer in the crate receives its own generator derived
//! from a master seed plus a path of indices (update, group, member, ...).
//! Results therefore never depend on how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for the stream identified by `seed` and `path`.
pub fn stream(seed: u64, path: &[u64]) -> Rng {
    let mut h = splitmix64(seed);
    for &p in path {
        h = splitmix64(h ^ splitmix64(p.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    Rng::seed_from_u64(h)
}

/// Stable tags that separate the top-level consumers of a master seed.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const EXPERT: u64 = 2;
    pub const DEMOS: u64 = 3;
    pub const SFT: u64 = 4;
    pub const RL: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const CALIBRATION: u64 = 7;
    pub const SHUFFLE: u64 = 8;
}
