//! Seeded random streams. Every stochastic step takes an explicit seed so that runs are
//! reproducible and independent of thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for item `index` of a stream rooted at `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

/// Derives a seed for a named component (e.g. `"noise"`, `"sampling"`).
pub fn component_seed(seed: u64, component: &str) -> u64 {
    // FNV-1a over the name.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in component.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    derive_seed(seed, h)
}

/// Independent stream for item `index` (a sentence, a batch, ...).
pub fn stream(seed: u64, index: u64) -> Rng {
    seeded(derive_seed(seed, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(7, 3).random();
        assert_eq!(a, stream(7, 3).random::<u64>());
        assert_ne!(a, stream(7, 4).random::<u64>());
        assert_ne!(component_seed(1, "noise"), component_seed(1, "sampling"));
    }
}
