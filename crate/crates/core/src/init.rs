use rand::distributions::{Distribution, Uniform};

use crate::numerics::Tensor;
use crate::seed::Rng;

/// Glorot-uniform: entries ~ U(-a, a) with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(shape, a, rng)
}

/// Glorot-uniform for an `in×out` matrix.
pub fn glorot_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    glorot(&[rows, cols], rows, cols, rng)
}

pub fn uniform(shape: &[usize], bound: f64, rng: &mut Rng) -> Tensor {
    let dist = Uniform::new_inclusive(-bound, bound);
    let n = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).unwrap().with_requires_grad(true)
}

pub fn zeros(shape: &[usize]) -> Tensor {
    Tensor::zeros(shape).with_requires_grad(true)
}
