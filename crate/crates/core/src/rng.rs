//! Seed derivation. Every random component draws from its own ChaCha stream
//! keyed by the run seed, a component tag, and an index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `(seed, tag, index)`.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    // FNV-1a over the tag
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(splitmix64(seed ^ h).wrapping_add(index))
}

pub fn component_rng(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_streams() {
        assert_eq!(derive_seed(7, "synth", 0), derive_seed(7, "synth", 0));
        assert_ne!(derive_seed(7, "synth", 0), derive_seed(7, "synth", 1));
        assert_ne!(derive_seed(7, "synth", 0), derive_seed(7, "train", 0));
        assert_ne!(derive_seed(7, "synth", 0), derive_seed(8, "synth", 0));
    }
}
