//! Seed derivation for independent random streams.
//!
//! Every stochastic component gets its own ChaCha stream derived from a root
//! seed, a stream tag and an index, so trials and iterations can run in any
//! order and still draw identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags. Distinct tags never share a stream for the same root seed.
pub mod stream {
    pub const ROLLOUT: u64 = 1;
    pub const LEARNER: u64 = 2;
    pub const HUMAN: u64 = 3;
    pub const SEARCH: u64 = 4;
    pub const CLUSTER: u64 = 5;
    pub const FOREST: u64 = 6;
    pub const TREE: u64 = 7;
    pub const FOLDS: u64 = 8;
    pub const TRIAL: u64 = 9;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(root: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(root) ^ stream.wrapping_mul(0xA24B_AED4_963E_E407)) ^ index)
}

pub fn stream_rng(root: u64, stream: u64, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(root, stream, index))
}
