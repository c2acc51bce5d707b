//! Seed derivation. Every random stream in the crate is a ChaCha generator
//! whose seed is derived from the experiment seed plus a list of integer keys
//! (epoch, example index, purpose tag, ...), so streams never depend on the
//! order in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `keys` into `seed`. Distinct key paths give independent seeds.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn stream(seed: u64, keys: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, keys))
}

/// Purpose tags used as the first key of a derived stream.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const MASK: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const SYNTH: u64 = 5;
    pub const CAPTION_PICK: u64 = 6;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn streams_are_reproducible_and_key_sensitive() {
        let a: u64 = stream(7, &[1, 2]).random();
        let b: u64 = stream(7, &[1, 2]).random();
        let c: u64 = stream(7, &[2, 1]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(derive_seed(7, &[]), derive_seed(8, &[]));
    }
}
