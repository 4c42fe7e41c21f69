//! The shared regression head: `Dense(128) + ReLU -> Dense(64) + ReLU -> Dense(1)`.
//! The first kernel carries the L2 penalty.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::neural::activations::{relu_backward, relu_in_place};
use crate::neural::layers::Dense;
use crate::tensor::Tensor;

pub const HEAD_UNITS: [usize; 3] = [128, 64, 1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpHead {
    pub dense1: Dense,
    pub dense2: Dense,
    pub dense3: Dense,
}

pub(crate) struct HeadCache {
    x: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
}

impl MlpHead {
    pub fn new(input: usize, rng: &mut impl Rng) -> Self {
        Self {
            dense1: Dense::new(input, HEAD_UNITS[0], rng),
            dense2: Dense::new(HEAD_UNITS[0], HEAD_UNITS[1], rng),
            dense3: Dense::new(HEAD_UNITS[1], HEAD_UNITS[2], rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            dense1: self.dense1.zeros_like(),
            dense2: self.dense2.zeros_like(),
            dense3: self.dense3.zeros_like(),
        }
    }

    pub(crate) fn forward(&self, x: Vec<f64>, batch: usize) -> (Vec<f64>, HeadCache) {
        let mut a1 = self.dense1.forward(&x, batch);
        relu_in_place(&mut a1);
        let mut a2 = self.dense2.forward(&a1, batch);
        relu_in_place(&mut a2);
        let out = self.dense3.forward(&a2, batch);
        (out, HeadCache { x, a1, a2 })
    }

    pub(crate) fn backward(&self, cache: &HeadCache, d_out: &[f64], grad: &mut Self) -> Vec<f64> {
        let batch = d_out.len();
        let mut d2 = self.dense3.backward(&cache.a2, d_out, batch, &mut grad.dense3);
        relu_backward(&mut d2, &cache.a2);
        let mut d1 = self.dense2.backward(&cache.a1, &d2, batch, &mut grad.dense2);
        relu_backward(&mut d1, &cache.a1);
        self.dense1.backward(&cache.x, &d1, batch, &mut grad.dense1)
    }

    pub(crate) fn named<'a>(&'a self, out: &mut Vec<(String, &'a Tensor)>) {
        for (n, d) in [("head.dense1", &self.dense1), ("head.dense2", &self.dense2), ("head.dense3", &self.dense3)] {
            out.push((format!("{n}.kernel"), &d.kernel));
            out.push((format!("{n}.bias"), &d.bias));
        }
    }

    pub(crate) fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        for d in [&mut self.dense1, &mut self.dense2, &mut self.dense3] {
            out.push(&mut d.kernel);
            out.push(&mut d.bias);
        }
    }
}
