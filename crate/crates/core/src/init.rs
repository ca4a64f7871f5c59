//! Seeded weight initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Deterministic RNG for a (seed, stream label) pair, so every named
/// parameter draws from its own stream regardless of construction order.
pub fn stream_rng(seed: u64, label: &str) -> ChaCha8Rng {
    // FNV-1a over the label, folded into the seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h.rotate_left(17))
}

/// Zero-mean Gaussian with standard deviation `sqrt(2 / fan_in)`.
pub fn he_init<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
    if fan_in == 0 {
        return Err(Error::contract("he_init", "fan_in must be positive"));
    }
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
    let data = (0..n).map(|_| T::of(dist.sample(rng))).collect();
    Tensor::from_vec(shape, data)
}

/// [`he_init`] drawing from a fresh generator seeded by `seed`.
pub fn he_init_seeded<T: Scalar>(shape: &[usize], fan_in: usize, seed: u64) -> Result<Tensor<T>> {
    he_init(shape, fan_in, &mut ChaCha8Rng::seed_from_u64(seed))
}
