//! Seeded random sources. Everything random in the crate goes through
//! ChaCha8 so runs are reproducible across platforms.

use alloc::vec::Vec;

use rand::Rng;
pub use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` values drawn uniformly from `[-scale, scale]`.
pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..=scale)).collect()
}

pub fn shuffle<T>(rng: &mut ChaCha8Rng, items: &mut [T]) {
    use rand::seq::SliceRandom;
    items.shuffle(rng);
}

/// Derives an independent seed from a base seed and a stream label
/// (64-bit FNV-1a over the seed bytes and the label).
pub fn derive_seed(base: u64, label: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for &b in base.to_le_bytes().iter().chain(label) {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}
