//! Conv front-end, two stacked LSTM layers and an MLP head.
//!
//! ```text
//! window (W x F) -> conv1d(3, 32) + ReLU -> LSTM(128) -> LSTM(64)
//!   -> last hidden state -> Dense(128) + ReLU -> Dense(64) + ReLU -> Dense(1)
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::activations::{relu_backward, relu_in_place, sigmoid};
use crate::neural::head::{HeadCache, MlpHead, HEAD_UNITS};
use crate::neural::init::glorot_uniform;
use crate::neural::layers::Conv1d;
use crate::neural::{stack_windows, Network};
use crate::tensor::{gemm, MatRef, Tensor};

pub const CONV_FILTERS: usize = 32;
pub const LSTM1_HIDDEN: usize = 128;
pub const LSTM2_HIDDEN: usize = 64;

/// Gate weights act on the concatenation `[h_{t-1}, x_t]`; each matrix is
/// `hidden x (hidden + input)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmCellWeights {
    pub w_f: Tensor,
    pub w_i: Tensor,
    pub w_c: Tensor,
    pub w_o: Tensor,
    pub b_f: Tensor,
    pub b_i: Tensor,
    pub b_c: Tensor,
    pub b_o: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Per-step activations of a batched sequence pass.
struct StepCache {
    z: Vec<f64>,
    f: Vec<f64>,
    i: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmCellWeights {
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let cols = hidden + input;
        let mut gate = || glorot_uniform(&[hidden, cols], cols, hidden, rng);
        let (w_f, w_i, w_c, w_o) = (gate(), gate(), gate(), gate());
        Self {
            w_f,
            w_i,
            w_c,
            w_o,
            b_f: Tensor::filled(&[hidden], 1.0),
            b_i: Tensor::zeros(&[hidden]),
            b_c: Tensor::zeros(&[hidden]),
            b_o: Tensor::zeros(&[hidden]),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = Tensor::zeros(&[hidden, hidden + input]);
        let b = Tensor::zeros(&[hidden]);
        Self {
            w_f: w.clone(),
            w_i: w.clone(),
            w_c: w.clone(),
            w_o: w,
            b_f: b.clone(),
            b_i: b.clone(),
            b_c: b.clone(),
            b_o: b,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_f.shape()[0]
    }

    pub fn input(&self) -> usize {
        self.w_f.shape()[1] - self.hidden()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input(), self.hidden())
    }

    fn weights(&self) -> [&Tensor; 4] {
        [&self.w_f, &self.w_i, &self.w_c, &self.w_o]
    }

    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (n, t) in [
            ("w_f", &self.w_f),
            ("w_i", &self.w_i),
            ("w_c", &self.w_c),
            ("w_o", &self.w_o),
            ("b_f", &self.b_f),
            ("b_i", &self.b_i),
            ("b_c", &self.b_c),
            ("b_o", &self.b_o),
        ] {
            out.push((format!("{prefix}.{n}"), t));
        }
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.extend([
            &mut self.w_f,
            &mut self.w_i,
            &mut self.w_c,
            &mut self.w_o,
            &mut self.b_f,
            &mut self.b_i,
            &mut self.b_c,
            &mut self.b_o,
        ]);
    }

    /// `pre = z W^T + b` for one gate over a batch.
    fn gate_pre(w: &Tensor, b: &Tensor, z: &[f64], batch: usize) -> Vec<f64> {
        let mut out = b.data().repeat(batch);
        gemm(1.0, MatRef::new(z, batch, w.shape()[1]), MatRef::of(w).t(), 1.0, &mut out);
        out
    }

    /// Run the layer over `xs` (one `batch x input` block per time step).
    fn forward_sequence(&self, xs: &[Vec<f64>], batch: usize) -> (Vec<Vec<f64>>, Vec<StepCache>) {
        let (h, inp) = (self.hidden(), self.input());
        let cols = h + inp;
        let mut h_prev = vec![0.0; batch * h];
        let mut c_prev = vec![0.0; batch * h];
        let mut hs = Vec::with_capacity(xs.len());
        let mut caches = Vec::with_capacity(xs.len());
        for x in xs {
            let mut z = vec![0.0; batch * cols];
            for b in 0..batch {
                z[b * cols..b * cols + h].copy_from_slice(&h_prev[b * h..(b + 1) * h]);
                z[b * cols + h..(b + 1) * cols].copy_from_slice(&x[b * inp..(b + 1) * inp]);
            }
            let mut f = Self::gate_pre(&self.w_f, &self.b_f, &z, batch);
            let mut i = Self::gate_pre(&self.w_i, &self.b_i, &z, batch);
            let mut g = Self::gate_pre(&self.w_c, &self.b_c, &z, batch);
            let mut o = Self::gate_pre(&self.w_o, &self.b_o, &z, batch);
            f.iter_mut().for_each(|v| *v = sigmoid(*v));
            i.iter_mut().for_each(|v| *v = sigmoid(*v));
            g.iter_mut().for_each(|v| *v = v.tanh());
            o.iter_mut().for_each(|v| *v = sigmoid(*v));
            let c: Vec<f64> = (0..batch * h).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
            let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
            let h_new: Vec<f64> = (0..batch * h).map(|k| o[k] * tanh_c[k]).collect();
            hs.push(h_new.clone());
            c_prev = c.clone();
            h_prev = h_new;
            caches.push(StepCache { z, f, i, g, o, c, tanh_c });
        }
        (hs, caches)
    }

    /// Backpropagation through time. `dhs[t]` is the gradient arriving at
    /// `h_t` from above; returns the gradients with respect to each `x_t`.
    fn backward_sequence(&self, caches: &[StepCache], dhs: &[Vec<f64>], batch: usize, grad: &mut Self) -> Vec<Vec<f64>> {
        let (h, inp) = (self.hidden(), self.input());
        let cols = h + inp;
        let n = batch * h;
        let mut dh_next = vec![0.0; n];
        let mut dc_next = vec![0.0; n];
        let mut dxs = vec![Vec::new(); caches.len()];
        let zero = vec![0.0; n];
        for t in (0..caches.len()).rev() {
            let s = &caches[t];
            let c_prev = if t > 0 { &caches[t - 1].c } else { &zero };
            let mut da = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
            for k in 0..n {
                let dh = dhs[t][k] + dh_next[k];
                let d_o = dh * s.tanh_c[k];
                let dc = dh * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]) + dc_next[k];
                let d_f = dc * c_prev[k];
                let d_i = dc * s.g[k];
                let d_g = dc * s.i[k];
                dc_next[k] = dc * s.f[k];
                da[0][k] = d_f * s.f[k] * (1.0 - s.f[k]);
                da[1][k] = d_i * s.i[k] * (1.0 - s.i[k]);
                da[2][k] = d_g * (1.0 - s.g[k] * s.g[k]);
                da[3][k] = d_o * s.o[k] * (1.0 - s.o[k]);
            }
            let zm = MatRef::new(&s.z, batch, cols);
            let mut dz = vec![0.0; batch * cols];
            let grads = [
                (&mut grad.w_f, &mut grad.b_f),
                (&mut grad.w_i, &mut grad.b_i),
                (&mut grad.w_c, &mut grad.b_c),
                (&mut grad.w_o, &mut grad.b_o),
            ];
            for ((dgate, w), (gw, gb)) in da.iter().zip(self.weights()).zip(grads) {
                let dm = MatRef::new(dgate, batch, h);
                gemm(1.0, dm.t(), zm, 1.0, gw.data_mut());
                for row in dgate.chunks(h) {
                    for (acc, v) in gb.data_mut().iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                gemm(1.0, dm, MatRef::of(w), 1.0, &mut dz);
            }
            let mut dx = vec![0.0; batch * inp];
            for b in 0..batch {
                dh_next[b * h..(b + 1) * h].copy_from_slice(&dz[b * cols..b * cols + h]);
                dx[b * inp..(b + 1) * inp].copy_from_slice(&dz[b * cols + h..(b + 1) * cols]);
            }
            dxs[t] = dx;
        }
        dxs
    }
}

/// One step of the cell:
/// `f, i, o = sigmoid(W [h, x] + b)`, `c~ = tanh(W_c [h, x] + b_c)`,
/// `C = f * C_prev + i * c~`, `h = o * tanh(C)`.
pub fn lstm_cell_step(x: &[f64], state: &LstmState, weights: &LstmCellWeights) -> Result<LstmState> {
    let h = weights.hidden();
    if x.len() != weights.input() || state.h.len() != h || state.c.len() != h {
        return Err(Error::Shape(format!(
            "lstm step expects input {} and state {h}, got input {} and state {}/{}",
            weights.input(),
            x.len(),
            state.h.len(),
            state.c.len()
        )));
    }
    let mut z = state.h.clone();
    z.extend_from_slice(x);
    let pre = |w: &Tensor, b: &Tensor| LstmCellWeights::gate_pre(w, b, &z, 1);
    let f: Vec<f64> = pre(&weights.w_f, &weights.b_f).into_iter().map(sigmoid).collect();
    let i: Vec<f64> = pre(&weights.w_i, &weights.b_i).into_iter().map(sigmoid).collect();
    let g: Vec<f64> = pre(&weights.w_c, &weights.b_c).into_iter().map(f64::tanh).collect();
    let o: Vec<f64> = pre(&weights.w_o, &weights.b_o).into_iter().map(sigmoid).collect();
    let c: Vec<f64> = (0..h).map(|k| f[k] * state.c[k] + i[k] * g[k]).collect();
    let h_new = (0..h).map(|k| o[k] * c[k].tanh()).collect();
    Ok(LstmState { h: h_new, c })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmNetwork {
    pub conv: Conv1d,
    pub lstm1: LstmCellWeights,
    pub lstm2: LstmCellWeights,
    pub head: MlpHead,
}

pub struct LstmCache {
    batch: usize,
    len: usize,
    col: Vec<f64>,
    conv_act: Vec<f64>,
    steps1: Vec<StepCache>,
    steps2: Vec<StepCache>,
    head: HeadCache,
}

impl LstmNetwork {
    pub fn new(features: usize, rng: &mut impl Rng) -> Self {
        Self {
            conv: Conv1d::new(features, CONV_FILTERS, rng),
            lstm1: LstmCellWeights::new(CONV_FILTERS, LSTM1_HIDDEN, rng),
            lstm2: LstmCellWeights::new(LSTM1_HIDDEN, LSTM2_HIDDEN, rng),
            head: MlpHead::new(LSTM2_HIDDEN, rng),
        }
    }

    /// Closed-form parameter count for `features` inputs.
    pub fn expected_param_count(features: usize) -> usize {
        let conv = 3 * features * CONV_FILTERS + CONV_FILTERS;
        let lstm = |input: usize, hidden: usize| 4 * (hidden * (hidden + input) + hidden);
        let head = LSTM2_HIDDEN * HEAD_UNITS[0]
            + HEAD_UNITS[0]
            + HEAD_UNITS[0] * HEAD_UNITS[1]
            + HEAD_UNITS[1]
            + HEAD_UNITS[1] * HEAD_UNITS[2]
            + HEAD_UNITS[2];
        conv + lstm(CONV_FILTERS, LSTM1_HIDDEN) + lstm(LSTM1_HIDDEN, LSTM2_HIDDEN) + head
    }
}

fn to_time_major(x: &[f64], batch: usize, len: usize, width: usize) -> Vec<Vec<f64>> {
    (0..len)
        .map(|t| {
            let mut step = Vec::with_capacity(batch * width);
            for b in 0..batch {
                let r = b * len + t;
                step.extend_from_slice(&x[r * width..(r + 1) * width]);
            }
            step
        })
        .collect()
}

fn from_time_major(steps: &[Vec<f64>], batch: usize, len: usize, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; batch * len * width];
    for (t, step) in steps.iter().enumerate() {
        for b in 0..batch {
            let r = b * len + t;
            out[r * width..(r + 1) * width].copy_from_slice(&step[b * width..(b + 1) * width]);
        }
    }
    out
}

impl Network for LstmNetwork {
    type Cache = LstmCache;

    fn input_features(&self) -> usize {
        self.conv.input_channels()
    }

    fn forward_batch(&self, windows: &[&Tensor]) -> Result<(Vec<f64>, LstmCache)> {
        let (x, batch, len) = stack_windows(windows, self.input_features())?;
        let (mut conv_act, col) = self.conv.forward(&x, batch, len);
        relu_in_place(&mut conv_act);
        let xs = to_time_major(&conv_act, batch, len, self.conv.output_channels());
        let (hs1, steps1) = self.lstm1.forward_sequence(&xs, batch);
        let (mut hs2, steps2) = self.lstm2.forward_sequence(&hs1, batch);
        let last = hs2.pop().expect("at least one step");
        let (out, head) = self.head.forward(last, batch);
        Ok((
            out,
            LstmCache {
                batch,
                len,
                col,
                conv_act,
                steps1,
                steps2,
                head,
            },
        ))
    }

    fn backward_batch(&self, cache: &LstmCache, d_out: &[f64]) -> Self {
        let (batch, len) = (cache.batch, cache.len);
        let mut grad = self.zeros_like();
        let d_last = self.head.backward(&cache.head, d_out, &mut grad.head);

        let mut dhs2 = vec![vec![0.0; batch * self.lstm2.hidden()]; len];
        dhs2[len - 1] = d_last;
        let dhs1 = self.lstm2.backward_sequence(&cache.steps2, &dhs2, batch, &mut grad.lstm2);
        let dxs = self.lstm1.backward_sequence(&cache.steps1, &dhs1, batch, &mut grad.lstm1);

        let mut d_conv = from_time_major(&dxs, batch, len, self.conv.output_channels());
        relu_backward(&mut d_conv, &cache.conv_act);
        self.conv.backward(&cache.col, &d_conv, batch, len, &mut grad.conv);
        grad
    }

    fn zeros_like(&self) -> Self {
        Self {
            conv: self.conv.zeros_like(),
            lstm1: self.lstm1.zeros_like(),
            lstm2: self.lstm2.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("conv.kernel".to_string(), &self.conv.kernel), ("conv.bias".to_string(), &self.conv.bias)];
        self.lstm1.named("lstm1", &mut out);
        self.lstm2.named("lstm2", &mut out);
        self.head.named(&mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.conv.kernel, &mut self.conv.bias];
        self.lstm1.params_mut(&mut out);
        self.lstm2.params_mut(&mut out);
        self.head.params_mut(&mut out);
        out
    }

    fn l2_kernel(&self) -> &Tensor {
        &self.head.dense1.kernel
    }

    fn l2_kernel_mut(&mut self) -> &mut Tensor {
        &mut self.head.dense1.kernel
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::gradcheck::{grad_check, DEFAULT_COORDS_PER_TENSOR, DEFAULT_STEP};
    use crate::neural::optim::OptimizerState;
    use crate::neural::{apply_sgd, loss_and_gradient, LossConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_window(len: usize, features: usize, rng: &mut impl Rng) -> Tensor {
        Tensor::from_vec(&[len, features], (0..len * features).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn zero_weights_halve_the_cell() {
        let w = LstmCellWeights::zeros(3, 4);
        let state = LstmState {
            h: vec![0.2, -0.1, 0.7, 0.0],
            c: vec![1.0, -2.0, 0.4, 3.0],
        };
        let next = lstm_cell_step(&[0.5, -1.0, 2.0], &state, &w).unwrap();
        for k in 0..4 {
            assert!((next.c[k] - 0.5 * state.c[k]).abs() < 1e-15);
            assert!((next.h[k] - 0.5 * (0.5 * state.c[k]).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_gates_keep_memory() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut w = LstmCellWeights::new(2, 3, &mut rng);
        w.w_f.fill(0.0);
        w.w_i.fill(0.0);
        w.b_f.fill(30.0);
        w.b_i.fill(-30.0);
        let mut state = LstmState {
            h: vec![0.1, 0.2, 0.3],
            c: vec![0.9, -0.4, 1.5],
        };
        let c0 = state.c.clone();
        for step in 0..10 {
            state = lstm_cell_step(&[step as f64, -1.0], &state, &w).unwrap();
        }
        for (a, b) in state.c.iter().zip(&c0) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(state.h.iter().all(|h| h.abs() < 1.0));
    }

    #[test]
    fn step_rejects_bad_shapes() {
        let w = LstmCellWeights::zeros(3, 4);
        assert!(lstm_cell_step(&[1.0], &LstmState::zeros(4), &w).is_err());
        assert!(lstm_cell_step(&[1.0, 2.0, 3.0], &LstmState::zeros(2), &w).is_err());
    }

    #[test]
    fn batched_sequence_matches_cell_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = LstmCellWeights::new(3, 4, &mut rng);
        let seqs: Vec<Vec<Vec<f64>>> = (0..2)
            .map(|_| (0..5).map(|_| (0..3).map(|_| rng.random::<f64>() - 0.5).collect()).collect())
            .collect();
        let xs: Vec<Vec<f64>> = (0..5).map(|t| [seqs[0][t].clone(), seqs[1][t].clone()].concat()).collect();
        let (hs, _) = w.forward_sequence(&xs, 2);
        for (b, seq) in seqs.iter().enumerate() {
            let mut state = LstmState::zeros(4);
            for (t, x) in seq.iter().enumerate() {
                state = lstm_cell_step(x, &state, &w).unwrap();
                for k in 0..4 {
                    assert!((hs[t][b * 4 + k] - state.h[k]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = LstmCellWeights::new(6, 8, &mut rng);
        assert!(w.b_f.data().iter().all(|&b| b == 1.0));
        assert!(w.b_i.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = LstmNetwork::new(6, &mut rng);
        assert_eq!(net.param_count(), LstmNetwork::expected_param_count(6));
        assert_eq!(net.named_params().len(), net.clone().params_mut().len());
    }

    #[test]
    fn output_is_scalar_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = LstmNetwork::new(6, &mut rng);
        let x = random_window(24, 6, &mut rng);
        let a = net.predict(&x).unwrap();
        assert!(a.is_finite());
        assert_eq!(a, net.predict(&x).unwrap());
        let batch = net.predict_batch(&[&x, &x]).unwrap();
        assert_eq!(batch.len(), 2);
        assert!((batch[0] - a).abs() < 1e-14);
        assert!(net.predict(&random_window(24, 5, &mut rng)).is_err());
    }

    #[test]
    fn backward_is_linear_in_upstream_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = LstmNetwork::new(6, &mut rng);
        let x = random_window(8, 6, &mut rng);
        let (_, cache) = net.forward_batch(&[&x]).unwrap();
        let g1 = net.backward_batch(&cache, &[1.0]);
        let g2 = net.backward_batch(&cache, &[2.0]);
        for ((_, a), (_, b)) in g1.named_params().iter().zip(g2.named_params()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((2.0 * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }
    }

    #[test]
    fn zero_residual_leaves_head_bias_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut net = LstmNetwork::new(6, &mut rng);
        net.head.dense1.kernel.fill(0.0);
        let x = random_window(6, 6, &mut rng);
        let target = net.predict(&x).unwrap();
        let (_, grad) = loss_and_gradient(&net, &[&x], &[target], &LossConfig::default()).unwrap();
        assert!(grad.head.dense3.bias.data().iter().all(|&g| g == 0.0));
        assert!(grad.head.dense1.kernel.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = LstmNetwork::new(6, &mut rng);
        let x = Tensor::from_vec(&[24, 6], (0..144).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap();
        let target = net.predict(&x).unwrap() + 0.6;
        let report = grad_check(&net, &x, target, &LossConfig::default(), DEFAULT_COORDS_PER_TENSOR, DEFAULT_STEP, 1).unwrap();
        let worst = report.worst().unwrap();
        assert!(report.max_rel_error < 1e-4, "{} {}", worst.name, worst.max_rel_error);
    }

    #[test]
    fn learns_a_sine_toy_problem() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let len = 8;
        let series: Vec<f64> = (0..len + 50).map(|t| 0.5 + 0.4 * (t as f64 * 0.35).sin()).collect();
        let windows: Vec<Tensor> = (0..50)
            .map(|s| Tensor::from_vec(&[len, 1], series[s..s + len].to_vec()).unwrap())
            .collect();
        let targets: Vec<f64> = (0..50).map(|s| series[s + len]).collect();
        let refs: Vec<&Tensor> = windows.iter().collect();
        let cfg = LossConfig::default();
        let mut net = LstmNetwork::new(1, &mut rng);
        let mut opt = OptimizerState::new(0.01, 0.9);
        let (first, _) = loss_and_gradient(&net, &refs, &targets, &cfg).unwrap();
        let mut last = first;
        for _ in 0..200 {
            for (ws, ts) in refs.chunks(10).zip(targets.chunks(10)) {
                let (_, grad) = loss_and_gradient(&net, ws, ts, &cfg).unwrap();
                apply_sgd(&mut net, &grad, &mut opt).unwrap();
            }
            last = loss_and_gradient(&net, &refs, &targets, &cfg).unwrap().0;
        }
        assert!(last <= 0.5 * first, "loss {first} -> {last}");
    }
}
