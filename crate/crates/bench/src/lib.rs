//! Seeded inputs shared by the benchmarks.

use favc_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform values in `[-1, 1)` with the given shape.
pub fn uniform(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Sum of a 10 Hz sinusoid and uniform noise, `len` samples at `fs`.
pub fn noisy_sine(len: usize, fs: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|i| (2.0 * std::f64::consts::PI * 10.0 * i as f64 / fs).sin() + 0.3 * rng.random_range(-1.0..1.0))
        .collect()
}
