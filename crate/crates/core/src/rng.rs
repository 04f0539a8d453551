//! Seed derivation shared by every stochastic component.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed for item `index` of stream `stream`.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93)) ^ index)
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Named streams so that unrelated consumers never share random numbers.
pub mod stream {
    pub const ENV: u64 = 1;
    pub const EXPERT: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SAMPLING: u64 = 4;
    pub const POLICY: u64 = 5;
    pub const TREE: u64 = 6;
    pub const EVAL: u64 = 7;
    pub const TOY: u64 = 8;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_across_streams_and_indices() {
        let a = derive_seed(7, stream::ENV, 0);
        assert_eq!(a, derive_seed(7, stream::ENV, 0));
        assert_ne!(a, derive_seed(7, stream::ENV, 1));
        assert_ne!(a, derive_seed(7, stream::EXPERT, 0));
        assert_ne!(a, derive_seed(8, stream::ENV, 0));
    }
}
