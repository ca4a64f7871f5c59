//! Shared fixtures for the benchmarks under `benches/`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tbnet::data::{Dataset, SynthParams};
use tbnet::trainer::{stack_clips, train_clip, TrainConfig};
use tbnet::Tensor;

/// Uniform values in [-1, 1).
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("positive extents")
}

/// A desk-scale training batch of `n` clips with its labels.
pub fn desk_batch(n: usize, seed: u64) -> (Tensor<f32>, Vec<usize>) {
    let data = Dataset::synthetic(SynthParams::default(), n, seed).expect("default parameters are valid");
    let cfg = TrainConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clips: Vec<_> = (0..n).map(|i| train_clip(&data, i, &cfg, &mut rng).expect("clip fits")).collect();
    (stack_clips(&clips).expect("same geometry"), data.labels().to_vec())
}
