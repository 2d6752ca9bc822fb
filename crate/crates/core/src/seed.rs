//! Deterministic seed derivation.
//!
//! Every random draw in the crate is driven by a ChaCha8 stream seeded from a
//! 64-bit value. Per-packet seeds are derived from a base seed and a list of
//! indices with [`derive`], which folds each word through the SplitMix64
//! finalizer:
//!
//! ```text
//! state = base
//! for w in words: state = splitmix64(state ^ splitmix64(w + GOLDEN))
//! ```
//!
//! The augmentation seed of a packet is `derive(base_seed, &[epoch, packet_index, view])`,
//! so results do not depend on worker count or iteration order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(base: u64, words: &[u64]) -> u64 {
    words.iter().fold(splitmix64(base), |state, &w| {
        splitmix64(state ^ splitmix64(w.wrapping_add(GOLDEN)))
    })
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_is_order_sensitive() {
        assert_ne!(derive(7, &[1, 2]), derive(7, &[2, 1]));
        assert_eq!(derive(7, &[1, 2]), derive(7, &[1, 2]));
        assert_ne!(derive(7, &[0]), derive(8, &[0]));
    }
}
