//! Huber regression loss and the L2 kernel penalty.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_HUBER_DELTA: f64 = 1.0;
pub const DEFAULT_L2_LAMBDA: f64 = 1e-4;

#[inline]
pub fn huber(error: f64, delta: f64) -> f64 {
    let a = error.abs();
    if a <= delta {
        0.5 * error * error
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Derivative of [`huber`] with respect to the error.
#[inline]
pub fn huber_derivative(error: f64, delta: f64) -> f64 {
    if error.abs() <= delta {
        error
    } else {
        delta * error.signum()
    }
}

/// Mean Huber loss of `predicted - actual`.
pub fn huber_loss(predicted: &[f64], actual: &[f64], delta: f64) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::Shape(format!(
            "huber_loss: {} predictions vs {} actuals",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Empty("huber_loss input"));
    }
    let sum: f64 = predicted.iter().zip(actual).map(|(p, a)| huber(p - a, delta)).sum();
    Ok(sum / predicted.len() as f64)
}

/// `lambda * sum(w^2)`.
pub fn l2_penalty(weights: &Tensor, lambda: f64) -> f64 {
    lambda * weights.sum_sq()
}

/// `grad += 2 * lambda * w`
pub fn add_l2_gradient(grad: &mut Tensor, weights: &Tensor, lambda: f64) {
    grad.axpy(2.0 * lambda, weights);
}
