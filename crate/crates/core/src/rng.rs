//! Seeded random streams.
//!
//! Every random stream in the testbed is a ChaCha8 generator
//! (`rand_chacha::ChaCha8Rng`) seeded through [`derive_seed`], which folds a
//! list of 64-bit words with the SplitMix64 finalizer. Golden fixtures depend
//! on both choices; changing either invalidates them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags, kept distinct so that derived seeds never alias.
pub mod tag {
    pub const TASK: u64 = 0x7461_736b;
    pub const EVAL: u64 = 0x6576_616c;
    pub const AGENT: u64 = 0x6167_6e74;
    pub const THETA: u64 = 0x7468_6574;
    pub const ES: u64 = 0x6573_6573;
    pub const TRAIN: u64 = 0x7472_6e73;
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `parts` into a single seed. Order matters.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6a09_e667_f3bc_c908, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}

pub type Rng = ChaCha8Rng;
