//! Deterministic parameter initialization.

use super::{Shape, Tensor};
use rand::Rng;

/// Glorot (Xavier) uniform init for a 2-D weight: entries drawn from
/// `+-sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::new(Shape::matrix(rows, cols), data).expect("sized to shape")
}

/// Uniform init over `[lo, hi)` for an arbitrary shape.
pub fn uniform<R: Rng>(shape: Shape, lo: f64, hi: f64, rng: &mut R) -> Tensor {
    let data: Vec<f64> = (0..shape.numel()).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape, data).expect("sized to shape")
}
