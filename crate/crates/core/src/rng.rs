//! Deterministic seed derivation.
//!
//! Every stochastic component (parameter init, batch sampling, per-sample
//! dataset generation) draws from its own `StdRng` seeded through
//! [`derive_seed`], so results never depend on call order or thread count.

use rand::rngs::StdRng;
use rand::SeedableRng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives an independent sub-seed for `(stream, index)` under `master`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(stream)) ^ index)
}

/// An `StdRng` for the given substream.
pub fn stream_rng(master: u64, stream: u64, index: u64) -> StdRng {
    StdRng::seed_from_u64(derive_seed(master, stream, index))
}

/// Named substreams so different consumers of one master seed never collide.
pub mod streams {
    pub const PARAM_INIT: u64 = 1;
    pub const BATCH_SAMPLER: u64 = 2;
    pub const DATA_SHUFFLE: u64 = 3;
    pub const DATA_SAMPLE: u64 = 4;
    pub const DATA_ENV_BASE: u64 = 16;
}
