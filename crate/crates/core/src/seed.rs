//! Deterministic seed derivation.
//!
//! Every random draw in the crate goes through a `ChaCha8Rng` whose seed is
//! derived from a master seed and a small tuple of indices, so results do not
//! depend on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a sequence of words into a new 64-bit seed.
pub fn derive(master: u64, words: &[u64]) -> u64 {
    words
        .iter()
        .fold(splitmix(master), |acc, &w| splitmix(acc ^ splitmix(w)))
}

pub fn rng(master: u64, words: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, words))
}
