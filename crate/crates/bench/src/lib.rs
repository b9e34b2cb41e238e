//! Shared inputs for the criterion benchmarks.

use tstcc_core::{Rng, Tensor};

/// Standard-normal tensor of `shape` drawn from `seed`.
pub fn randn(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = Rng::new(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.normal(0.0, 1.0)).collect();
    Tensor::from_vec(data, shape).expect("shape matches data")
}

/// Same as [`randn`] but tracked for gradients.
pub fn randn_param(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = Rng::new(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.normal(0.0, 1.0)).collect();
    Tensor::parameter(data, shape).expect("shape matches data")
}
