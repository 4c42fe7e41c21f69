//! Numeric building blocks shared by the two neural model families.

pub mod activations;
pub mod gradcheck;
pub mod head;
pub mod init;
pub mod layers;
pub mod loss;
pub mod optim;

use serde::{Deserialize, Serialize};

pub use activations::{relu, sigmoid, softmax};
pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{Conv1d, Dense, LayerNorm};
pub use loss::{huber_loss, l2_penalty};
pub use optim::{schedule_tick, sgd_step, OptimizerState, Tick, TrainingSchedule};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub huber_delta: f64,
    pub l2_lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            huber_delta: loss::DEFAULT_HUBER_DELTA,
            l2_lambda: loss::DEFAULT_L2_LAMBDA,
        }
    }
}

/// A scalar regressor over `W x F` windows with a hand-written backward pass.
///
/// The gradient container is the network type itself: `backward_batch`
/// returns a value whose parameters hold `dL/dparam`, aligned with
/// [`Network::named_params`].
pub trait Network: Clone + Send + Sync {
    type Cache;

    fn input_features(&self) -> usize;

    fn forward_batch(&self, windows: &[&Tensor]) -> Result<(Vec<f64>, Self::Cache)>;

    /// Gradients of `sum_b d_out[b] * prediction[b]`.
    fn backward_batch(&self, cache: &Self::Cache, d_out: &[f64]) -> Self;

    fn zeros_like(&self) -> Self;

    fn named_params(&self) -> Vec<(String, &Tensor)>;

    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    /// The kernel carrying the L2 penalty.
    fn l2_kernel(&self) -> &Tensor;

    fn l2_kernel_mut(&mut self) -> &mut Tensor;

    fn predict(&self, window: &Tensor) -> Result<f64> {
        Ok(self.forward_batch(&[window])?.0[0])
    }

    fn predict_batch(&self, windows: &[&Tensor]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(windows)?.0)
    }

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Stack windows into one `(B*W) x F` buffer, checking they agree in shape.
pub fn stack_windows(windows: &[&Tensor], features: usize) -> Result<(Vec<f64>, usize, usize)> {
    let first = windows.first().ok_or(Error::Empty("window batch"))?;
    let len = first.rows();
    for w in windows {
        if w.shape() != [len, features] || len == 0 {
            return Err(Error::Shape(format!(
                "expected windows of shape [{len}, {features}] with at least one step, got {:?}",
                w.shape()
            )));
        }
    }
    let mut data = Vec::with_capacity(windows.len() * len * features);
    for w in windows {
        data.extend_from_slice(w.data());
    }
    Ok((data, windows.len(), len))
}

/// Sum of per-sample Huber losses and the gradient of that sum (no L2).
pub fn huber_sum_and_gradient<N: Network>(
    net: &N,
    windows: &[&Tensor],
    targets: &[f64],
    delta: f64,
) -> Result<(f64, N)> {
    if windows.len() != targets.len() {
        return Err(Error::Shape(format!("{} windows vs {} targets", windows.len(), targets.len())));
    }
    let (pred, cache) = net.forward_batch(windows)?;
    let mut total = 0.0;
    let d_out: Vec<f64> = pred
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            total += loss::huber(p - t, delta);
            loss::huber_derivative(p - t, delta)
        })
        .collect();
    Ok((total, net.backward_batch(&cache, &d_out)))
}

/// Mean Huber loss over the batch plus the L2 penalty, and its gradient.
pub fn loss_and_gradient<N: Network>(
    net: &N,
    windows: &[&Tensor],
    targets: &[f64],
    cfg: &LossConfig,
) -> Result<(f64, N)> {
    let (sum, mut grad) = huber_sum_and_gradient(net, windows, targets, cfg.huber_delta)?;
    let n = windows.len() as f64;
    for p in grad.params_mut() {
        p.scale(1.0 / n);
    }
    loss::add_l2_gradient(grad.l2_kernel_mut(), net.l2_kernel(), cfg.l2_lambda);
    Ok((sum / n + loss::l2_penalty(net.l2_kernel(), cfg.l2_lambda), grad))
}

/// Apply one momentum step to every parameter of `net`.
pub fn apply_sgd<N: Network>(net: &mut N, grad: &N, state: &mut OptimizerState) -> Result<()> {
    let grads: Vec<&Tensor> = grad.named_params().into_iter().map(|(_, t)| t).collect();
    sgd_step(net.params_mut(), &grads, state)
}
