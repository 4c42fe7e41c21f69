//! Conv front-end, one post-norm encoder block and the shared MLP head.
//!
//! ```text
//! window (W x F) -> conv1d(3, 256) + ReLU [+ sinusoidal positions]
//!   -> X1 = LN(X + MHA(X)) -> X2 = LN(X1 + FFN(X1))
//!   -> mean over time -> Dense(128) + ReLU -> Dense(64) + ReLU -> Dense(1)
//! ```
//!
//! Attention uses 4 heads of width 64 without projection biases.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::activations::{relu_backward, relu_in_place, softmax_backward_in_place, softmax_in_place};
use crate::neural::head::{HeadCache, MlpHead};
use crate::neural::init::glorot_uniform;
use crate::neural::layers::{Conv1d, Dense, LayerNorm, LayerNormCache};
use crate::neural::{stack_windows, Network};
use crate::tensor::{gemm, gemm_ld, matmul, MatRef, Tensor};

pub const MODEL_DIM: usize = 256;
pub const NUM_HEADS: usize = 4;
pub const HEAD_DIM: usize = 64;
pub const FFN_UNITS: usize = 256;

/// `softmax(Q K^T / sqrt(d_k)) V` for a single head.
pub fn scaled_dot_product_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (n, dk) = (q.rows(), q.cols());
    let m = k.rows();
    if q.shape().len() != 2 || k.shape() != [m, dk] || v.rows() != m || m == 0 {
        return Err(Error::Shape(format!(
            "attention shapes q {:?}, k {:?}, v {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let mut p = vec![0.0; n * m];
    gemm(1.0 / (dk as f64).sqrt(), MatRef::of(q), MatRef::of(k).t(), 0.0, &mut p);
    p.chunks_mut(m).for_each(softmax_in_place);
    Tensor::from_vec(&[n, v.cols()], matmul(MatRef::new(&p, n, m), MatRef::of(v)))
}

/// Projections for multi-head attention. `w_q`, `w_k`, `w_v` map the model
/// dimension onto `heads * head_dim` concatenated head columns; `w_o` maps back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionWeights {
    pub heads: usize,
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
}

pub(crate) struct AttentionCache {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    concat: Vec<f64>,
}

impl AttentionWeights {
    pub fn new(model_dim: usize, heads: usize, head_dim: usize, rng: &mut impl Rng) -> Self {
        let inner = heads * head_dim;
        let mut proj = |a: usize, b: usize| glorot_uniform(&[a, b], a, b, rng);
        let (w_q, w_k, w_v) = (proj(model_dim, inner), proj(model_dim, inner), proj(model_dim, inner));
        let w_o = proj(inner, model_dim);
        Self { heads, w_q, w_k, w_v, w_o }
    }

    pub fn zeros(model_dim: usize, heads: usize, head_dim: usize) -> Self {
        let inner = heads * head_dim;
        Self {
            heads,
            w_q: Tensor::zeros(&[model_dim, inner]),
            w_k: Tensor::zeros(&[model_dim, inner]),
            w_v: Tensor::zeros(&[model_dim, inner]),
            w_o: Tensor::zeros(&[inner, model_dim]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.model_dim(), self.heads, self.head_dim())
    }

    pub fn model_dim(&self) -> usize {
        self.w_q.rows()
    }

    pub fn head_dim(&self) -> usize {
        self.w_q.cols() / self.heads
    }

    /// Per-head attention blocks of sample `b`, head `h`, as views into the
    /// concatenated `(batch * len) x inner` buffers.
    fn block<'a>(&self, buf: &'a [f64], b: usize, h: usize, len: usize) -> MatRef<'a> {
        let inner = self.w_q.cols();
        let dk = self.head_dim();
        MatRef::strided(&buf[b * len * inner + h * dk..], len, dk, inner, 1)
    }

    fn forward(&self, x: &[f64], batch: usize, len: usize) -> (Vec<f64>, AttentionCache) {
        let (dm, inner, dk) = (self.model_dim(), self.w_q.cols(), self.head_dim());
        let n = batch * len;
        let xm = MatRef::new(x, n, dm);
        let q = matmul(xm, MatRef::of(&self.w_q));
        let k = matmul(xm, MatRef::of(&self.w_k));
        let v = matmul(xm, MatRef::of(&self.w_v));
        let scale = 1.0 / (dk as f64).sqrt();
        let mut probs = vec![0.0; batch * self.heads * len * len];
        let mut concat = vec![0.0; n * inner];
        for b in 0..batch {
            for h in 0..self.heads {
                let p = &mut probs[(b * self.heads + h) * len * len..][..len * len];
                gemm(scale, self.block(&q, b, h, len), self.block(&k, b, h, len).t(), 0.0, p);
                p.chunks_mut(len).for_each(softmax_in_place);
                let off = b * len * inner + h * dk;
                gemm_ld(1.0, MatRef::new(p, len, len), self.block(&v, b, h, len), 0.0, &mut concat[off..], inner);
            }
        }
        let out = matmul(MatRef::new(&concat, n, inner), MatRef::of(&self.w_o));
        (out, AttentionCache { q, k, v, probs, concat })
    }

    fn backward(&self, x: &[f64], cache: &AttentionCache, d_out: &[f64], batch: usize, len: usize, grad: &mut Self) -> Vec<f64> {
        let (dm, inner, dk) = (self.model_dim(), self.w_q.cols(), self.head_dim());
        let n = batch * len;
        let dom = MatRef::new(d_out, n, dm);
        gemm(1.0, MatRef::new(&cache.concat, n, inner).t(), dom, 1.0, grad.w_o.data_mut());
        let d_concat = matmul(dom, MatRef::of(&self.w_o).t());

        let scale = 1.0 / (dk as f64).sqrt();
        let mut dq = vec![0.0; n * inner];
        let mut dk_buf = vec![0.0; n * inner];
        let mut dv = vec![0.0; n * inner];
        let mut ds = vec![0.0; len * len];
        for b in 0..batch {
            for h in 0..self.heads {
                let p = &cache.probs[(b * self.heads + h) * len * len..][..len * len];
                let pm = MatRef::new(p, len, len);
                let dctx = self.block(&d_concat, b, h, len);
                let off = b * len * inner + h * dk;
                gemm(1.0, dctx, self.block(&cache.v, b, h, len).t(), 0.0, &mut ds);
                gemm_ld(1.0, pm.t(), dctx, 0.0, &mut dv[off..], inner);
                for (pr, dr) in p.chunks(len).zip(ds.chunks_mut(len)) {
                    softmax_backward_in_place(pr, dr);
                }
                let dsm = MatRef::new(&ds, len, len);
                gemm_ld(scale, dsm, self.block(&cache.k, b, h, len), 0.0, &mut dq[off..], inner);
                gemm_ld(scale, dsm.t(), self.block(&cache.q, b, h, len), 0.0, &mut dk_buf[off..], inner);
            }
        }

        let xt = MatRef::new(x, n, dm).t();
        let mut dx = vec![0.0; n * dm];
        for (dproj, w, gw) in [
            (&dq, &self.w_q, &mut grad.w_q),
            (&dk_buf, &self.w_k, &mut grad.w_k),
            (&dv, &self.w_v, &mut grad.w_v),
        ] {
            let dpm = MatRef::new(dproj, n, inner);
            gemm(1.0, xt, dpm, 1.0, gw.data_mut());
            gemm(1.0, dpm, MatRef::of(w).t(), 1.0, &mut dx);
        }
        dx
    }
}

/// Multi-head self-attention over one sequence `x` (`len x model_dim`).
pub fn multi_head_attention(x: &Tensor, weights: &AttentionWeights) -> Result<Tensor> {
    if x.shape().len() != 2 || x.cols() != weights.model_dim() || x.rows() == 0 {
        return Err(Error::Shape(format!(
            "attention over model dim {}, got {:?}",
            weights.model_dim(),
            x.shape()
        )));
    }
    let (out, _) = weights.forward(x.data(), 1, x.rows());
    Tensor::from_vec(x.shape(), out)
}

/// Sinusoidal encodings: `sin(pos / 10000^(2i/d))` on even columns and the
/// matching cosine on odd ones.
pub fn positional_encoding(len: usize, dim: usize) -> Tensor {
    let mut pe = Tensor::zeros(&[len, dim]);
    for pos in 0..len {
        for j in 0..dim {
            let angle = pos as f64 / 10000f64.powf((j - j % 2) as f64 / dim as f64);
            pe.set2(pos, j, if j % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    pe
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderBlock {
    pub attention: AttentionWeights,
    pub norm1: LayerNorm,
    pub ffn1: Dense,
    pub ffn2: Dense,
    pub norm2: LayerNorm,
}

pub(crate) struct BlockCache {
    attention: AttentionCache,
    norm1: LayerNormCache,
    y1: Vec<f64>,
    hidden: Vec<f64>,
    norm2: LayerNormCache,
}

impl EncoderBlock {
    pub fn new(model_dim: usize, heads: usize, head_dim: usize, ffn_units: usize, rng: &mut impl Rng) -> Self {
        Self {
            attention: AttentionWeights::new(model_dim, heads, head_dim, rng),
            norm1: LayerNorm::new(model_dim),
            ffn1: Dense::new(model_dim, ffn_units, rng),
            ffn2: Dense::new(ffn_units, model_dim, rng),
            norm2: LayerNorm::new(model_dim),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            attention: self.attention.zeros_like(),
            norm1: self.norm1.zeros_like(),
            ffn1: self.ffn1.zeros_like(),
            ffn2: self.ffn2.zeros_like(),
            norm2: self.norm2.zeros_like(),
        }
    }

    fn forward(&self, x: &[f64], batch: usize, len: usize) -> (Vec<f64>, BlockCache) {
        let n = batch * len;
        let (att, attention) = self.attention.forward(x, batch, len);
        let r1: Vec<f64> = x.iter().zip(&att).map(|(a, b)| a + b).collect();
        let (y1, norm1) = self.norm1.forward(&r1);
        let mut hidden = self.ffn1.forward(&y1, n);
        relu_in_place(&mut hidden);
        let f = self.ffn2.forward(&hidden, n);
        let r2: Vec<f64> = y1.iter().zip(&f).map(|(a, b)| a + b).collect();
        let (y2, norm2) = self.norm2.forward(&r2);
        (
            y2,
            BlockCache {
                attention,
                norm1,
                y1,
                hidden,
                norm2,
            },
        )
    }

    fn backward(&self, x: &[f64], cache: &BlockCache, dy: &[f64], batch: usize, len: usize, grad: &mut Self) -> Vec<f64> {
        let n = batch * len;
        let dr2 = self.norm2.backward(&cache.norm2, dy, &mut grad.norm2);
        let mut dh = self.ffn2.backward(&cache.hidden, &dr2, n, &mut grad.ffn2);
        relu_backward(&mut dh, &cache.hidden);
        let mut dy1 = self.ffn1.backward(&cache.y1, &dh, n, &mut grad.ffn1);
        dy1.iter_mut().zip(&dr2).for_each(|(a, b)| *a += b);
        let dr1 = self.norm1.backward(&cache.norm1, &dy1, &mut grad.norm1);
        let mut dx = self.attention.backward(x, &cache.attention, &dr1, batch, len, &mut grad.attention);
        dx.iter_mut().zip(&dr1).for_each(|(a, b)| *a += b);
        dx
    }

    fn named<'a>(&'a self, out: &mut Vec<(String, &'a Tensor)>) {
        let a = &self.attention;
        out.extend([
            ("block.attention.w_q".to_string(), &a.w_q),
            ("block.attention.w_k".to_string(), &a.w_k),
            ("block.attention.w_v".to_string(), &a.w_v),
            ("block.attention.w_o".to_string(), &a.w_o),
            ("block.norm1.gain".to_string(), &self.norm1.gain),
            ("block.norm1.bias".to_string(), &self.norm1.bias),
            ("block.ffn1.kernel".to_string(), &self.ffn1.kernel),
            ("block.ffn1.bias".to_string(), &self.ffn1.bias),
            ("block.ffn2.kernel".to_string(), &self.ffn2.kernel),
            ("block.ffn2.bias".to_string(), &self.ffn2.bias),
            ("block.norm2.gain".to_string(), &self.norm2.gain),
            ("block.norm2.bias".to_string(), &self.norm2.bias),
        ]);
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        let a = &mut self.attention;
        out.extend([
            &mut a.w_q,
            &mut a.w_k,
            &mut a.w_v,
            &mut a.w_o,
            &mut self.norm1.gain,
            &mut self.norm1.bias,
            &mut self.ffn1.kernel,
            &mut self.ffn1.bias,
            &mut self.ffn2.kernel,
            &mut self.ffn2.bias,
            &mut self.norm2.gain,
            &mut self.norm2.bias,
        ]);
    }
}

/// One encoder block applied to a single sequence (`len x model_dim`).
pub fn encoder_block_forward(x: &Tensor, block: &EncoderBlock) -> Result<Tensor> {
    if x.shape().len() != 2 || x.cols() != block.norm1.dim() || x.rows() == 0 {
        return Err(Error::Shape(format!(
            "encoder block over model dim {}, got {:?}",
            block.norm1.dim(),
            x.shape()
        )));
    }
    let (y, _) = block.forward(x.data(), 1, x.rows());
    Tensor::from_vec(x.shape(), y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerNetwork {
    pub conv: Conv1d,
    pub block: EncoderBlock,
    pub head: MlpHead,
    pub positional_encoding: bool,
}

pub struct TransformerCache {
    batch: usize,
    len: usize,
    col: Vec<f64>,
    conv_act: Vec<f64>,
    block_input: Vec<f64>,
    block: BlockCache,
    head: HeadCache,
}

impl TransformerNetwork {
    pub fn new(features: usize, positional_encoding: bool, rng: &mut impl Rng) -> Self {
        Self {
            conv: Conv1d::new(features, MODEL_DIM, rng),
            block: EncoderBlock::new(MODEL_DIM, NUM_HEADS, HEAD_DIM, FFN_UNITS, rng),
            head: MlpHead::new(MODEL_DIM, rng),
            positional_encoding,
        }
    }

    fn model_dim(&self) -> usize {
        self.conv.output_channels()
    }
}

impl Network for TransformerNetwork {
    type Cache = TransformerCache;

    fn input_features(&self) -> usize {
        self.conv.input_channels()
    }

    fn forward_batch(&self, windows: &[&Tensor]) -> Result<(Vec<f64>, TransformerCache)> {
        let (x, batch, len) = stack_windows(windows, self.input_features())?;
        let dm = self.model_dim();
        let (mut conv_act, col) = self.conv.forward(&x, batch, len);
        relu_in_place(&mut conv_act);
        let mut block_input = conv_act.clone();
        if self.positional_encoding {
            let pe = positional_encoding(len, dm);
            for row in block_input.chunks_mut(len * dm) {
                row.iter_mut().zip(pe.data()).for_each(|(a, p)| *a += p);
            }
        }
        let (y, block) = self.block.forward(&block_input, batch, len);
        let mut pooled = vec![0.0; batch * dm];
        for b in 0..batch {
            let dst = &mut pooled[b * dm..(b + 1) * dm];
            for row in y[b * len * dm..(b + 1) * len * dm].chunks(dm) {
                dst.iter_mut().zip(row).for_each(|(a, v)| *a += v);
            }
            dst.iter_mut().for_each(|a| *a /= len as f64);
        }
        let (out, head) = self.head.forward(pooled, batch);
        Ok((
            out,
            TransformerCache {
                batch,
                len,
                col,
                conv_act,
                block_input,
                block,
                head,
            },
        ))
    }

    fn backward_batch(&self, cache: &TransformerCache, d_out: &[f64]) -> Self {
        let (batch, len, dm) = (cache.batch, cache.len, self.model_dim());
        let mut grad = self.zeros_like();
        let d_pooled = self.head.backward(&cache.head, d_out, &mut grad.head);
        let mut dy = vec![0.0; batch * len * dm];
        for b in 0..batch {
            let src = &d_pooled[b * dm..(b + 1) * dm];
            for row in dy[b * len * dm..(b + 1) * len * dm].chunks_mut(dm) {
                row.iter_mut().zip(src).for_each(|(a, g)| *a = g / len as f64);
            }
        }
        let mut dx = self.block.backward(&cache.block_input, &cache.block, &dy, batch, len, &mut grad.block);
        relu_backward(&mut dx, &cache.conv_act);
        self.conv.backward(&cache.col, &dx, batch, len, &mut grad.conv);
        grad
    }

    fn zeros_like(&self) -> Self {
        Self {
            conv: self.conv.zeros_like(),
            block: self.block.zeros_like(),
            head: self.head.zeros_like(),
            positional_encoding: self.positional_encoding,
        }
    }

    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("conv.kernel".to_string(), &self.conv.kernel), ("conv.bias".to_string(), &self.conv.bias)];
        self.block.named(&mut out);
        self.head.named(&mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.conv.kernel, &mut self.conv.bias];
        self.block.params_mut(&mut out);
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
