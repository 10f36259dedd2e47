//! Deterministic seed derivation.
//!
//! Every random stream in a run is keyed by the run seed plus a short tag
//! path (step, prompt id, purpose). Streams never share state, so results do
//! not depend on the order in which independent pieces of work execute.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Concrete RNG used throughout the crate.
pub type SimRng = ChaCha8Rng;

/// Purpose tags for derived streams.
pub mod tag {
    pub const WORLD: u64 = 0x5752_4c44;
    pub const PLAN: u64 = 0x504c_414e;
    pub const ROLLOUT: u64 = 0x524f_4c4c;
    pub const REFILL: u64 = 0x5246_494c;
    pub const TOKENS: u64 = 0x544f_4b4e;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a tag path into `base`.
pub fn derive(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// Builds an RNG for the stream identified by `base` and `tags`.
pub fn stream(base: u64, tags: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive(base, tags))
}
