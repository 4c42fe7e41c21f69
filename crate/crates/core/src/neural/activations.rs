//! Elementwise activations and the row softmax.

use crate::tensor::Tensor;

/// Logistic function, evaluated so that neither branch overflows.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn sigmoid_tensor(t: &Tensor) -> Tensor {
    t.map(sigmoid)
}

pub fn relu_tensor(t: &Tensor) -> Tensor {
    t.map(relu)
}

pub fn tanh_tensor(t: &Tensor) -> Tensor {
    t.map(f64::tanh)
}

pub fn relu_in_place(xs: &mut [f64]) {
    xs.iter_mut().for_each(|x| *x = relu(*x));
}

/// `grad *= 1[activation > 0]`
pub fn relu_backward(grad: &mut [f64], activation: &[f64]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Max-subtracted softmax over one row, in place.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Softmax along the last axis.
pub fn softmax(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    let cols = out.cols();
    if cols > 0 {
        out.data_mut().chunks_mut(cols).for_each(softmax_in_place);
    }
    out
}

/// Given softmax output `p` and upstream `dp` for one row, write the input
/// gradient into `dp`.
pub fn softmax_backward_in_place(p: &[f64], dp: &mut [f64]) {
    let dot: f64 = p.iter().zip(dp.iter()).map(|(a, b)| a * b).sum();
    for (d, &pi) in dp.iter_mut().zip(p) {
        *d = pi * (*d - dot);
    }
}
