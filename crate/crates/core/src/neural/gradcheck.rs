//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{loss_and_gradient, LossConfig, Network};
use crate::error::Result;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_COORDS_PER_TENSOR: usize = 50;

/// `|a - n| / max(1e-8, |a| + |n|)`
#[inline]
pub fn relative_error_scalar(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error_scalar(a, n))
        .fold(0.0, f64::max)
}

/// Central differences of `f` at `x` for every coordinate.
pub fn central_difference(x: &[f64], step: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub coords: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Compare the analytic gradient of Huber + L2 on one sample against central
/// differences on up to `coords_per_tensor` random coordinates of every
/// parameter tensor (all coordinates when a tensor is smaller).
pub fn grad_check<N: Network>(
    net: &N,
    window: &Tensor,
    target: f64,
    loss: &LossConfig,
    coords_per_tensor: usize,
    step: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let (_, analytic) = loss_and_gradient(net, &[window], &[target], loss)?;
    let analytic_params: Vec<Vec<f64>> = analytic.named_params().into_iter().map(|(_, t)| t.data().to_vec()).collect();
    let names: Vec<String> = net.named_params().into_iter().map(|(n, _)| n).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = net.clone();
    let objective = |n: &N| -> Result<f64> { Ok(loss_and_value(n, window, target, loss)?) };

    let mut tensors = Vec::with_capacity(names.len());
    for (ti, name) in names.into_iter().enumerate() {
        let len = analytic_params[ti].len();
        let coords: Vec<usize> = if len <= coords_per_tensor {
            (0..len).collect()
        } else {
            let mut c = sample(&mut rng, len, coords_per_tensor).into_vec();
            c.sort_unstable();
            c
        };
        let mut worst: f64 = 0.0;
        for &ci in &coords {
            let orig = probe.params_mut()[ti].data()[ci];
            probe.params_mut()[ti].data_mut()[ci] = orig + step;
            let up = objective(&probe)?;
            probe.params_mut()[ti].data_mut()[ci] = orig - step;
            let down = objective(&probe)?;
            probe.params_mut()[ti].data_mut()[ci] = orig;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(relative_error_scalar(analytic_params[ti][ci], numeric));
        }
        tensors.push(TensorCheck {
            name,
            coords: coords.len(),
            max_rel_error: worst,
        });
    }
    Ok(GradCheckReport {
        max_rel_error: tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max),
        tensors,
    })
}

fn loss_and_value<N: Network>(net: &N, window: &Tensor, target: f64, loss: &LossConfig) -> Result<f64> {
    let (pred, _) = net.forward_batch(&[window])?;
    Ok(super::loss::huber(pred[0] - target, loss.huber_delta) + super::loss::l2_penalty(net.l2_kernel(), loss.l2_lambda))
}
