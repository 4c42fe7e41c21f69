//! Dense, temporal convolution and layer normalization, each with a
//! hand-written backward pass. Activations are row-major `rows x features`
//! buffers; a batch of `B` windows of length `W` is stacked as `B*W` rows.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::glorot_uniform;
use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Tensor};

/// Width of the temporal convolution kernels.
pub const CONV_WIDTH: usize = 3;
pub const LAYER_NORM_EPS: f64 = 1e-5;

fn col_sums_into(acc: &mut [f64], x: &[f64], cols: usize) {
    for row in x.chunks(cols) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
}

/// `y = x W + b` with `W: in x out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub kernel: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Self {
            kernel: glorot_uniform(&[input, output], input, output, rng),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            kernel: Tensor::zeros(&[input, output]),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn input_size(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn output_size(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_size(), self.output_size())
    }

    pub fn forward(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let i = self.input_size();
        let mut y: Vec<f64> = self.bias.data().repeat(rows);
        gemm(1.0, MatRef::new(x, rows, i), MatRef::of(&self.kernel), 1.0, &mut y);
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], rows: usize, grad: &mut Dense) -> Vec<f64> {
        let (i, o) = (self.input_size(), self.output_size());
        let dy_m = MatRef::new(dy, rows, o);
        gemm(1.0, MatRef::new(x, rows, i).t(), dy_m, 1.0, grad.kernel.data_mut());
        col_sums_into(grad.bias.data_mut(), dy, o);
        let mut dx = vec![0.0; rows * i];
        gemm(1.0, dy_m, MatRef::of(&self.kernel).t(), 0.0, &mut dx);
        dx
    }
}

/// Width-3 temporal convolution with "same" zero padding. Features are
/// channels; the kernel is stored as `[3, in, out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    pub kernel: Tensor,
    pub bias: Tensor,
}

impl Conv1d {
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Self {
            kernel: glorot_uniform(&[CONV_WIDTH, input, output], CONV_WIDTH * input, CONV_WIDTH * output, rng),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            kernel: Tensor::zeros(&[CONV_WIDTH, input, output]),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn input_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn output_channels(&self) -> usize {
        self.kernel.shape()[2]
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_channels(), self.output_channels())
    }

    /// Unfold `batch` sequences of length `len` into `(batch*len) x (3*in)`.
    pub fn im2col(&self, x: &[f64], batch: usize, len: usize) -> Vec<f64> {
        let c = self.input_channels();
        let width = CONV_WIDTH * c;
        let mut col = vec![0.0; batch * len * width];
        for b in 0..batch {
            for t in 0..len {
                let dst = &mut col[(b * len + t) * width..(b * len + t + 1) * width];
                for k in 0..CONV_WIDTH {
                    let src_t = t as isize + k as isize - 1;
                    if src_t < 0 || src_t >= len as isize {
                        continue;
                    }
                    let src = (b * len + src_t as usize) * c;
                    dst[k * c..(k + 1) * c].copy_from_slice(&x[src..src + c]);
                }
            }
        }
        col
    }

    /// Returns the output and the unfolded input (needed for backward).
    pub fn forward(&self, x: &[f64], batch: usize, len: usize) -> (Vec<f64>, Vec<f64>) {
        let rows = batch * len;
        let col = self.im2col(x, batch, len);
        let (k, o) = (CONV_WIDTH * self.input_channels(), self.output_channels());
        let mut y = self.bias.data().repeat(rows);
        gemm(1.0, MatRef::new(&col, rows, k), MatRef::new(self.kernel.data(), k, o), 1.0, &mut y);
        (y, col)
    }

    pub fn forward_tensor(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.cols() != self.input_channels() {
            return Err(Error::Shape(format!(
                "conv1d expects W x {} input, got {:?}",
                self.input_channels(),
                x.shape()
            )));
        }
        let (y, _) = self.forward(x.data(), 1, x.rows());
        Tensor::from_vec(&[x.rows(), self.output_channels()], y)
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&self, col: &[f64], dy: &[f64], batch: usize, len: usize, grad: &mut Conv1d) -> Vec<f64> {
        let c = self.input_channels();
        let (k, o) = (CONV_WIDTH * c, self.output_channels());
        let rows = batch * len;
        let dy_m = MatRef::new(dy, rows, o);
        gemm(1.0, MatRef::new(col, rows, k).t(), dy_m, 1.0, grad.kernel.data_mut());
        col_sums_into(grad.bias.data_mut(), dy, o);

        let mut dcol = vec![0.0; rows * k];
        gemm(1.0, dy_m, MatRef::new(self.kernel.data(), k, o).t(), 0.0, &mut dcol);
        let mut dx = vec![0.0; rows * c];
        for b in 0..batch {
            for t in 0..len {
                let src = &dcol[(b * len + t) * k..(b * len + t + 1) * k];
                for kk in 0..CONV_WIDTH {
                    let dst_t = t as isize + kk as isize - 1;
                    if dst_t < 0 || dst_t >= len as isize {
                        continue;
                    }
                    let dst = (b * len + dst_t as usize) * c;
                    for (d, s) in dx[dst..dst + c].iter_mut().zip(&src[kk * c..(kk + 1) * c]) {
                        *d += s;
                    }
                }
            }
        }
        dx
    }
}

/// Per-row normalization to zero mean and unit variance, then `gain * x + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
}

/// Normalized activations and inverse standard deviations, kept for backward.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gain: Tensor::filled(&[dim], 1.0),
            bias: Tensor::zeros(&[dim]),
        }
    }

    pub fn dim(&self) -> usize {
        self.gain.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            gain: Tensor::zeros(&[self.dim()]),
            bias: Tensor::zeros(&[self.dim()]),
        }
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, LayerNormCache) {
        let d = self.dim();
        let rows = x.len() / d;
        let mut y = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        let (g, b) = (self.gain.data(), self.bias.data());
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = s;
            for j in 0..d {
                let h = (row[j] - mean) * s;
                xhat[r * d + j] = h;
                y[r * d + j] = g[j] * h + b[j];
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn forward_tensor(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.dim() {
            return Err(Error::Shape(format!("layer norm over {} features, got {:?}", self.dim(), x.shape())));
        }
        let (y, _) = self.forward(x.data());
        Tensor::from_vec(x.shape(), y)
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &[f64], grad: &mut LayerNorm) -> Vec<f64> {
        let d = self.dim();
        let rows = dy.len() / d;
        let g = self.gain.data();
        let mut dx = vec![0.0; dy.len()];
        let mut dxhat = vec![0.0; d];
        for r in 0..rows {
            let xh = &cache.xhat[r * d..(r + 1) * d];
            let dyr = &dy[r * d..(r + 1) * d];
            {
                let gg = grad.gain.data_mut();
                for j in 0..d {
                    gg[j] += dyr[j] * xh[j];
                }
            }
            {
                let gb = grad.bias.data_mut();
                for j in 0..d {
                    gb[j] += dyr[j];
                }
            }
            let mut mean_d = 0.0;
            let mut mean_dx = 0.0;
            for j in 0..d {
                dxhat[j] = dyr[j] * g[j];
                mean_d += dxhat[j];
                mean_dx += dxhat[j] * xh[j];
            }
            mean_d /= d as f64;
            mean_dx /= d as f64;
            let s = cache.inv_std[r];
            for j in 0..d {
                dx[r * d + j] = s * (dxhat[j] - mean_d - xh[j] * mean_dx);
            }
        }
        dx
    }
}
