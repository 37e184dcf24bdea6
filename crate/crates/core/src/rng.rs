//! Seeded random streams.
//!
//! Every stochastic step derives its own generator from a base seed plus a
//! list of integer tags, so results do not depend on evaluation order or on
//! how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with tags into a 64-bit stream key.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(seed: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, tags))
}

/// Stream tags used across the crate. Keeping them in one place avoids
/// accidental reuse of the same stream for two purposes.
pub mod tag {
    pub const INIT_HAE: u64 = 1;
    pub const INIT_BACKBONE: u64 = 2;
    pub const INIT_ID_TABLE: u64 = 3;
    pub const SHUFFLE: u64 = 10;
    pub const BATCH_NEGATIVES: u64 = 11;
    pub const DROPOUT: u64 = 12;
    pub const EVAL_VALID: u64 = 20;
    pub const EVAL_TEST: u64 = 21;
    pub const SYNTH: u64 = 30;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn streams_are_reproducible_and_tag_sensitive() {
        let a = stream(42, &[1, 2]).next_u64();
        let b = stream(42, &[1, 2]).next_u64();
        let c = stream(42, &[2, 1]).next_u64();
        let d = stream(43, &[1, 2]).next_u64();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
