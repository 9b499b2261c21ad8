//! Central finite-difference gradient oracle.
//!
//! Evaluates only forward passes of a closure, so it stays independent of
//! the tape's backward implementation it is used to check.

use super::Tensor;

/// Default perturbation step for 64-bit central differences.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Numerical gradients of a scalar function of several tensors, by central
/// differences with the given step. Returns one gradient vector per input.
pub fn finite_difference_grads<F>(mut f: F, inputs: &[Tensor], step: f64) -> Vec<Vec<f64>>
where
    F: FnMut(&[Tensor]) -> f64,
{
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    #[allow(clippy::needless_range_loop)]
    for i in 0..inputs.len() {
        let mut g = vec![0.0; inputs[i].numel()];
        for j in 0..inputs[i].numel() {
            let orig = work[i].data[j];
            work[i].data[j] = orig + step;
            let up = f(&work);
            work[i].data[j] = orig - step;
            let down = f(&work);
            work[i].data[j] = orig;
            g[j] = (up - down) / (2.0 * step);
        }
        grads.push(g);
    }
    work.clone_from_slice(inputs);
    grads
}

/// Largest relative discrepancy between two gradient sets, with a floor so
/// near-zero entries compare absolutely.
pub fn max_rel_err(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        assert_eq!(a.len(), n.len());
        for (&x, &y) in a.iter().zip(n) {
            let denom = x.abs().max(y.abs()).max(1e-6);
            worst = worst.max((x - y).abs() / denom);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn differentiates_a_polynomial() {
        // f(x) = x0^2 + 3 x1
        let x = Tensor::new(Shape::vector(2), vec![2.0, -1.0]).unwrap();
        let g = finite_difference_grads(
            |t| t[0].data[0] * t[0].data[0] + 3.0 * t[0].data[1],
            std::slice::from_ref(&x),
            DEFAULT_STEP,
        );
        assert!((g[0][0] - 4.0).abs() < 1e-8);
        assert!((g[0][1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn rel_err_uses_floor_near_zero() {
        let a = vec![vec![0.0, 1.0]];
        let n = vec![vec![1e-9, 1.0 + 1e-7]];
        assert!(max_rel_err(&a, &n) < 1e-2);
    }
}
