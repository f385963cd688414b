//! A small BERT-style transformer encoder with a single dense classification
//! head on the CLS position, trained with binary cross-entropy.
//!
//! Layers use post-layer-norm residual blocks:
//!
//! ```text
//! h = LN1(x + MHA(x))
//! y = LN2(h + W2 gelu(W1 h + b1) + b2)
//! ```
//!
//! The pooled representation is the final hidden state of position 0 (the
//! CLS token). Dropout, when enabled, is applied to the pooled vector during
//! training only. Everything is computed in `f64` with hand-written reverse
//! mode gradients.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cleanse::{tokenize, CleansingConfig, TokenSequence};
use crate::corpus_io::{self, CorpusError, Label, SplitSpec, TweetRecord};
use crate::eval;
use crate::optimize::{self, OptimizeError, OptimizerConfig, OptimizerKind, OptimizerState};
use crate::vectorize::{build_vocab, VectorizeError, Vocabulary};

pub const CLS_ID: usize = 0;
pub const PAD_ID: usize = 1;
pub const UNK_ID: usize = 2;
/// Number of reserved ids preceding the word vocabulary.
pub const RESERVED_IDS: usize = 3;

const LN_EPS: f64 = 1e-12;
const INIT_STD: f64 = 0.02;
/// Probability clamp applied before taking logs in the loss.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("sequence of length {len} exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("token id {id} outside vocabulary of size {vocab_size}")]
    UnknownTokenId { id: usize, vocab_size: usize },
    #[error("sequence must start with the CLS token")]
    MissingCls,
    #[error("attention mask length {mask} does not match sequence length {len}")]
    MaskMismatch { mask: usize, len: usize },
    #[error("non-finite activation encountered")]
    NonFiniteActivation,
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("parameter tensor `{name}`: {message}")]
    BadTensor { name: String, message: String },
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Vectorize(#[from] VectorizeError),
}

pub type Result<T> = std::result::Result<T, EncoderError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    /// Includes the reserved CLS/PAD/UNK ids.
    pub vocab_size: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden: 128,
            heads: 4,
            ffn_dim: 512,
            max_len: 64,
            vocab_size: RESERVED_IDS,
            dropout_rate: 0.0,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EncoderError::InvalidConfig(m));
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return bad(format!("hidden {} not divisible by heads {}", self.hidden, self.heads));
        }
        if self.max_len < 2 {
            return bad("max_len must be at least 2".into());
        }
        if self.vocab_size < RESERVED_IDS {
            return bad("vocab_size must cover the reserved ids".into());
        }
        if self.ffn_dim == 0 {
            return bad("ffn_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} not in [0, 1)", self.dropout_rate));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

/// Weights of one encoder block. Projection matrices are stored `in x out`
/// row-major, so `y = x W + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub wq: Vec<f64>,
    pub bq: Vec<f64>,
    pub wk: Vec<f64>,
    pub bk: Vec<f64>,
    pub wv: Vec<f64>,
    pub bv: Vec<f64>,
    pub wo: Vec<f64>,
    pub bo: Vec<f64>,
    pub ln1_gamma: Vec<f64>,
    pub ln1_beta: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub ln2_gamma: Vec<f64>,
    pub ln2_beta: Vec<f64>,
}

const LAYER_TENSORS: [&str; 16] = [
    "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln1_gamma", "ln1_beta", "w1", "b1", "w2",
    "b2", "ln2_gamma", "ln2_beta",
];

impl LayerParams {
    fn filled(h: usize, f: usize, mut weight: impl FnMut() -> f64) -> Self {
        let mut mat = |n: usize| (0..n).map(|_| weight()).collect::<Vec<f64>>();
        Self {
            wq: mat(h * h),
            bq: vec![0.0; h],
            wk: mat(h * h),
            bk: vec![0.0; h],
            wv: mat(h * h),
            bv: vec![0.0; h],
            wo: mat(h * h),
            bo: vec![0.0; h],
            ln1_gamma: vec![1.0; h],
            ln1_beta: vec![0.0; h],
            w1: mat(h * f),
            b1: vec![0.0; f],
            w2: mat(f * h),
            b2: vec![0.0; h],
            ln2_gamma: vec![1.0; h],
            ln2_beta: vec![0.0; h],
        }
    }

    fn zeros(h: usize, f: usize) -> Self {
        let mut z = Self::filled(h, f, || 0.0);
        z.ln1_gamma.fill(0.0);
        z.ln2_gamma.fill(0.0);
        z
    }

    fn shapes(h: usize, f: usize) -> [Vec<usize>; 16] {
        [
            vec![h, h],
            vec![h],
            vec![h, h],
            vec![h],
            vec![h, h],
            vec![h],
            vec![h, h],
            vec![h],
            vec![h],
            vec![h],
            vec![h, f],
            vec![f],
            vec![f, h],
            vec![h],
            vec![h],
            vec![h],
        ]
    }

    fn buffers(&self) -> [&[f64]; 16] {
        [
            &self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo,
            &self.ln1_gamma, &self.ln1_beta, &self.w1, &self.b1, &self.w2, &self.b2,
            &self.ln2_gamma, &self.ln2_beta,
        ]
    }

    fn buffers_mut(&mut self) -> [&mut Vec<f64>; 16] {
        [
            &mut self.wq, &mut self.bq, &mut self.wk, &mut self.bk, &mut self.wv, &mut self.bv,
            &mut self.wo, &mut self.bo, &mut self.ln1_gamma, &mut self.ln1_beta, &mut self.w1,
            &mut self.b1, &mut self.w2, &mut self.b2, &mut self.ln2_gamma, &mut self.ln2_beta,
        ]
    }
}

/// All trainable weights. The same type doubles as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub token_embeddings: Vec<f64>,
    pub position_embeddings: Vec<f64>,
    pub layers: Vec<LayerParams>,
    pub head_weights: Vec<f64>,
    pub head_bias: f64,
}

/// A named, shaped view of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

impl EncoderParams {
    /// Weights from N(0, 0.02^2), biases zero, layer-norm scales one.
    pub fn init(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut draw = || normal.sample(&mut rng);
        let (h, f) = (config.hidden, config.ffn_dim);
        let token_embeddings = (0..config.vocab_size * h).map(|_| draw()).collect();
        let position_embeddings = (0..config.max_len * h).map(|_| draw()).collect();
        let layers = (0..config.layers)
            .map(|_| LayerParams::filled(h, f, &mut draw))
            .collect();
        let head_weights = (0..h).map(|_| draw()).collect();
        Ok(Self {
            token_embeddings,
            position_embeddings,
            layers,
            head_weights,
            head_bias: 0.0,
        })
    }

    pub fn zeros(config: &EncoderConfig) -> Self {
        let (h, f) = (config.hidden, config.ffn_dim);
        Self {
            token_embeddings: vec![0.0; config.vocab_size * h],
            position_embeddings: vec![0.0; config.max_len * h],
            layers: (0..config.layers).map(|_| LayerParams::zeros(h, f)).collect(),
            head_weights: vec![0.0; h],
            head_bias: 0.0,
        }
    }

    pub fn tensors(&self, config: &EncoderConfig) -> Vec<TensorView<'_>> {
        let (h, f) = (config.hidden, config.ffn_dim);
        let mut out = vec![
            TensorView {
                name: "token_embeddings".into(),
                shape: vec![config.vocab_size, h],
                data: &self.token_embeddings,
            },
            TensorView {
                name: "position_embeddings".into(),
                shape: vec![config.max_len, h],
                data: &self.position_embeddings,
            },
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            for ((name, shape), data) in LAYER_TENSORS
                .iter()
                .zip(LayerParams::shapes(h, f))
                .zip(layer.buffers())
            {
                out.push(TensorView {
                    name: format!("layer{l}.{name}"),
                    shape,
                    data,
                });
            }
        }
        out.push(TensorView {
            name: "head_weights".into(),
            shape: vec![h],
            data: &self.head_weights,
        });
        out.push(TensorView {
            name: "head_bias".into(),
            shape: vec![1],
            data: std::slice::from_ref(&self.head_bias),
        });
        out
    }

    /// Rebuilds parameters from `(name, data)` pairs in [`Self::tensors`] order.
    pub fn from_tensors(config: &EncoderConfig, tensors: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut params = Self::zeros(config);
        let expected: Vec<(String, usize)> = params
            .tensors(config)
            .into_iter()
            .map(|t| (t.name, t.data.len()))
            .collect();
        if expected.len() != tensors.len() {
            return Err(EncoderError::BadTensor {
                name: "<all>".into(),
                message: format!("expected {} tensors, got {}", expected.len(), tensors.len()),
            });
        }
        for ((name, len), (got_name, data)) in expected.iter().zip(&tensors) {
            if name != got_name || *len != data.len() {
                return Err(EncoderError::BadTensor {
                    name: got_name.clone(),
                    message: format!("expected `{name}` with {len} values, got {}", data.len()),
                });
            }
        }
        let mut data = tensors.into_iter().map(|(_, d)| d);
        params.token_embeddings = data.next().unwrap_or_default();
        params.position_embeddings = data.next().unwrap_or_default();
        for layer in &mut params.layers {
            for buf in layer.buffers_mut() {
                *buf = data.next().unwrap_or_default();
            }
        }
        params.head_weights = data.next().unwrap_or_default();
        params.head_bias = data.next().and_then(|d| d.first().copied()).unwrap_or(0.0);
        Ok(params)
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.token_embeddings, &mut self.position_embeddings];
        for layer in &mut self.layers {
            out.extend(layer.buffers_mut().into_iter().map(|b| b.as_mut_slice()));
        }
        out.push(&mut self.head_weights);
        out.push(std::slice::from_mut(&mut self.head_bias));
        out
    }

    pub fn buffers(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.token_embeddings, &self.position_embeddings];
        for layer in &self.layers {
            out.extend(layer.buffers());
        }
        out.push(&self.head_weights);
        out.push(std::slice::from_ref(&self.head_bias));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.buffers().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

// ---- dense helpers -------------------------------------------------------

/// `x (n x d_in) * w (d_in x d_out) + b`.
fn linear(x: &[f64], n: usize, w: &[f64], b: &[f64], d_in: usize, d_out: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * d_out];
    for i in 0..n {
        let row = &mut out[i * d_out..(i + 1) * d_out];
        row.copy_from_slice(b);
        for k in 0..d_in {
            let xv = x[i * d_in + k];
            if xv == 0.0 {
                continue;
            }
            let wrow = &w[k * d_out..(k + 1) * d_out];
            for (o, wv) in row.iter_mut().zip(wrow) {
                *o += xv * wv;
            }
        }
    }
    out
}

/// Accumulates `dw += x^T dy`, `db += sum_i dy` and returns `dx = dy w^T`.
#[allow(clippy::too_many_arguments)]
fn linear_backward(
    x: &[f64],
    n: usize,
    w: &[f64],
    d_in: usize,
    d_out: usize,
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; n * d_in];
    for i in 0..n {
        let dyr = &dy[i * d_out..(i + 1) * d_out];
        for (b, g) in db.iter_mut().zip(dyr) {
            *b += g;
        }
        for k in 0..d_in {
            let xv = x[i * d_in + k];
            let wrow = &w[k * d_out..(k + 1) * d_out];
            let dwrow = &mut dw[k * d_out..(k + 1) * d_out];
            let mut acc = 0.0;
            for o in 0..d_out {
                dwrow[o] += xv * dyr[o];
                acc += dyr[o] * wrow[o];
            }
            dx[i * d_in + k] = acc;
        }
    }
    dx
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2)) + x * (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

struct LayerNormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

fn layer_norm(x: &[f64], n: usize, h: usize, gamma: &[f64], beta: &[f64]) -> (Vec<f64>, LayerNormCache) {
    let mut out = vec![0.0; n * h];
    let mut xhat = vec![0.0; n * h];
    let mut inv_std = vec![0.0; n];
    for i in 0..n {
        let row = &x[i * h..(i + 1) * h];
        let mean = row.iter().sum::<f64>() / h as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / h as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        inv_std[i] = r;
        for k in 0..h {
            let xh = (row[k] - mean) * r;
            xhat[i * h + k] = xh;
            out[i * h + k] = gamma[k] * xh + beta[k];
        }
    }
    (out, LayerNormCache { xhat, inv_std })
}

fn layer_norm_backward(
    cache: &LayerNormCache,
    n: usize,
    h: usize,
    gamma: &[f64],
    dy: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; n * h];
    let mut dxhat = vec![0.0; h];
    for i in 0..n {
        let xh = &cache.xhat[i * h..(i + 1) * h];
        let g = &dy[i * h..(i + 1) * h];
        let mut mean_d = 0.0;
        let mut mean_dx = 0.0;
        for k in 0..h {
            dgamma[k] += g[k] * xh[k];
            dbeta[k] += g[k];
            dxhat[k] = g[k] * gamma[k];
            mean_d += dxhat[k];
            mean_dx += dxhat[k] * xh[k];
        }
        mean_d /= h as f64;
        mean_dx /= h as f64;
        for k in 0..h {
            dx[i * h + k] = cache.inv_std[i] * (dxhat[k] - mean_d - xh[k] * mean_dx);
        }
    }
    dx
}

// ---- attention -------------------------------------------------------------

/// Output of one multi-head self-attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    /// `n x H`, after the output projection.
    pub output: Vec<f64>,
    /// `heads x n x n`; masked key columns are exactly zero.
    pub weights: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    context: Vec<f64>,
}

fn check_mask(n: usize, mask: &[bool], config: &EncoderConfig) -> Result<()> {
    if n > config.max_len {
        return Err(EncoderError::SequenceTooLong {
            len: n,
            max_len: config.max_len,
        });
    }
    if mask.len() != n {
        return Err(EncoderError::MaskMismatch {
            mask: mask.len(),
            len: n,
        });
    }
    Ok(())
}

/// Scaled dot-product attention over `heads` slices of the hidden size.
/// `attend[j] == false` removes key position `j` from every softmax.
pub fn multi_head_attention(
    x: &[f64],
    layer: &LayerParams,
    config: &EncoderConfig,
    attend: &[bool],
) -> Result<AttentionOutput> {
    let h = config.hidden;
    let n = x.len() / h;
    check_mask(n, attend, config)?;
    let (heads, dh) = (config.heads, config.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();
    let q = linear(x, n, &layer.wq, &layer.bq, h, h);
    let k = linear(x, n, &layer.wk, &layer.bk, h, h);
    let v = linear(x, n, &layer.wv, &layer.bv, h, h);
    let mut weights = vec![0.0; heads * n * n];
    let mut context = vec![0.0; n * h];
    let mut scores = vec![0.0; n];
    for head in 0..heads {
        let off = head * dh;
        for i in 0..n {
            let qi = &q[i * h + off..i * h + off + dh];
            let mut max = f64::NEG_INFINITY;
            for j in 0..n {
                if attend[j] {
                    let kj = &k[j * h + off..j * h + off + dh];
                    let s = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                    scores[j] = s;
                    max = max.max(s);
                }
            }
            let row = &mut weights[(head * n + i) * n..(head * n + i + 1) * n];
            let mut z = 0.0;
            for j in 0..n {
                if attend[j] {
                    row[j] = (scores[j] - max).exp();
                    z += row[j];
                }
            }
            for j in 0..n {
                row[j] /= z;
            }
            let ci = &mut context[i * h + off..i * h + off + dh];
            for j in 0..n {
                if row[j] != 0.0 {
                    let vj = &v[j * h + off..j * h + off + dh];
                    for (c, vv) in ci.iter_mut().zip(vj) {
                        *c += row[j] * vv;
                    }
                }
            }
        }
    }
    let output = linear(&context, n, &layer.wo, &layer.bo, h, h);
    Ok(AttentionOutput {
        output,
        weights,
        q,
        k,
        v,
        context,
    })
}

fn attention_backward(
    x: &[f64],
    cache: &AttentionOutput,
    layer: &LayerParams,
    grad: &mut LayerParams,
    config: &EncoderConfig,
    d_out: &[f64],
) -> Vec<f64> {
    let h = config.hidden;
    let n = x.len() / h;
    let (heads, dh) = (config.heads, config.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();
    let d_context = linear_backward(&cache.context, n, &layer.wo, h, h, d_out, &mut grad.wo, &mut grad.bo);
    let mut dq = vec![0.0; n * h];
    let mut dk = vec![0.0; n * h];
    let mut dv = vec![0.0; n * h];
    let mut dp = vec![0.0; n];
    for head in 0..heads {
        let off = head * dh;
        for i in 0..n {
            let p = &cache.weights[(head * n + i) * n..(head * n + i + 1) * n];
            let dci = &d_context[i * h + off..i * h + off + dh];
            let mut dot_pdp = 0.0;
            for j in 0..n {
                if p[j] == 0.0 {
                    dp[j] = 0.0;
                    continue;
                }
                let vj = &cache.v[j * h + off..j * h + off + dh];
                dp[j] = dci.iter().zip(vj).map(|(a, b)| a * b).sum();
                dot_pdp += p[j] * dp[j];
                for d in 0..dh {
                    dv[j * h + off + d] += p[j] * dci[d];
                }
            }
            for j in 0..n {
                if p[j] == 0.0 {
                    continue;
                }
                let ds = p[j] * (dp[j] - dot_pdp) * scale;
                for d in 0..dh {
                    dq[i * h + off + d] += ds * cache.k[j * h + off + d];
                    dk[j * h + off + d] += ds * cache.q[i * h + off + d];
                }
            }
        }
    }
    let mut dx = linear_backward(x, n, &layer.wq, h, h, &dq, &mut grad.wq, &mut grad.bq);
    for (a, b) in dx
        .iter_mut()
        .zip(linear_backward(x, n, &layer.wk, h, h, &dk, &mut grad.wk, &mut grad.bk))
    {
        *a += b;
    }
    for (a, b) in dx
        .iter_mut()
        .zip(linear_backward(x, n, &layer.wv, h, h, &dv, &mut grad.wv, &mut grad.bv))
    {
        *a += b;
    }
    dx
}

// ---- full forward / backward ---------------------------------------------

struct LayerCache {
    input: Vec<f64>,
    attention: AttentionOutput,
    ln1: LayerNormCache,
    h1: Vec<f64>,
    ffn_pre: Vec<f64>,
    ffn_act: Vec<f64>,
    ln2: LayerNormCache,
}

/// Everything recorded by a forward pass.
pub struct ForwardTrace {
    layers: Vec<LayerCache>,
    n: usize,
    pooled: Vec<f64>,
    dropout_mask: Option<Vec<f64>>,
    pub logit: f64,
    pub prob: f64,
}

impl ForwardTrace {
    /// Pooled CLS representation (before dropout).
    pub fn pooled(&self) -> &[f64] {
        &self.pooled
    }

    /// `heads x n x n` attention weights of every layer.
    pub fn attention_weights(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().map(|l| l.attention.weights.as_slice())
    }

    /// Normalized (pre scale/offset) outputs of both layer norms of every layer.
    pub fn normalized_activations(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.ln1.xhat.as_slice(), l.ln2.xhat.as_slice()])
    }

    pub fn seq_len(&self) -> usize {
        self.n
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderOutput {
    pub logit: f64,
    pub prob: f64,
}

fn validate_ids(ids: &[usize], attend: &[bool], config: &EncoderConfig) -> Result<()> {
    if ids.first() != Some(&CLS_ID) {
        return Err(EncoderError::MissingCls);
    }
    check_mask(ids.len(), attend, config)?;
    if let Some(&id) = ids.iter().find(|&&id| id >= config.vocab_size) {
        return Err(EncoderError::UnknownTokenId {
            id,
            vocab_size: config.vocab_size,
        });
    }
    if !attend[0] {
        return Err(EncoderError::InvalidConfig("CLS position cannot be masked".into()));
    }
    Ok(())
}

/// Default attention mask: every non-PAD position is attended.
pub fn default_mask(ids: &[usize]) -> Vec<bool> {
    ids.iter().map(|&id| id != PAD_ID).collect()
}

/// Runs the network. `dropout_rng` enables training-mode dropout on the
/// pooled vector; pass `None` for evaluation.
pub fn forward_trace(
    ids: &[usize],
    attend: &[bool],
    params: &EncoderParams,
    config: &EncoderConfig,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardTrace> {
    validate_ids(ids, attend, config)?;
    let (h, f) = (config.hidden, config.ffn_dim);
    let n = ids.len();
    let mut x = vec![0.0; n * h];
    for (i, &id) in ids.iter().enumerate() {
        let row = &mut x[i * h..(i + 1) * h];
        let tok = &params.token_embeddings[id * h..(id + 1) * h];
        let pos = &params.position_embeddings[i * h..(i + 1) * h];
        for k in 0..h {
            row[k] = tok[k] + pos[k];
        }
    }
    let mut layers = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let attention = multi_head_attention(&x, layer, config, attend)?;
        let resid1: Vec<f64> = x.iter().zip(&attention.output).map(|(a, b)| a + b).collect();
        let (h1, ln1) = layer_norm(&resid1, n, h, &layer.ln1_gamma, &layer.ln1_beta);
        let ffn_pre = linear(&h1, n, &layer.w1, &layer.b1, h, f);
        let ffn_act: Vec<f64> = ffn_pre.iter().map(|&v| gelu(v)).collect();
        let ffn_out = linear(&ffn_act, n, &layer.w2, &layer.b2, f, h);
        let resid2: Vec<f64> = h1.iter().zip(&ffn_out).map(|(a, b)| a + b).collect();
        let (out, ln2) = layer_norm(&resid2, n, h, &layer.ln2_gamma, &layer.ln2_beta);
        layers.push(LayerCache {
            input: std::mem::replace(&mut x, out),
            attention,
            ln1,
            h1,
            ffn_pre,
            ffn_act,
            ln2,
        });
    }
    let pooled = x[..h].to_vec();
    let dropout_mask: Option<Vec<f64>> = match dropout_rng {
        Some(rng) if config.dropout_rate > 0.0 => {
            let keep = 1.0 - config.dropout_rate;
            Some(
                (0..h)
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect(),
            )
        }
        _ => None,
    };
    let mut logit = params.head_bias;
    for k in 0..h {
        let m = dropout_mask.as_ref().map_or(1.0, |m| m[k]);
        logit += params.head_weights[k] * pooled[k] * m;
    }
    if !logit.is_finite() {
        return Err(EncoderError::NonFiniteActivation);
    }
    Ok(ForwardTrace {
        layers,
        n,
        pooled,
        dropout_mask,
        logit,
        prob: sigmoid(logit),
    })
}

/// Forward pass returning `(pooled, logit, prob)`. `training` enables dropout
/// drawn from `rng`; evaluation mode ignores `rng`.
pub fn encoder_forward(
    ids: &[usize],
    params: &EncoderParams,
    config: &EncoderConfig,
    training: Option<&mut ChaCha8Rng>,
) -> Result<(Vec<f64>, EncoderOutput)> {
    let trace = forward_trace(ids, &default_mask(ids), params, config, training)?;
    let out = EncoderOutput {
        logit: trace.logit,
        prob: trace.prob,
    };
    Ok((trace.pooled, out))
}

/// `-t ln(p) - (1 - t) ln(1 - p)` with `p` clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(prob: f64, target: Label) -> f64 {
    let p = prob.clamp(BCE_EPS, 1.0 - BCE_EPS);
    let t = target as f64;
    -t * p.ln() - (1.0 - t) * (1.0 - p).ln()
}

/// d loss / d logit, zero where the clamp is active.
fn bce_logit_grad(prob: f64, target: Label) -> f64 {
    if !(BCE_EPS..=1.0 - BCE_EPS).contains(&prob) {
        0.0
    } else {
        prob - target as f64
    }
}

/// Accumulates `scale * d loss / d params` for one traced example.
fn backward_trace(
    trace: &ForwardTrace,
    target: Label,
    ids: &[usize],
    params: &EncoderParams,
    config: &EncoderConfig,
    scale: f64,
    grads: &mut EncoderParams,
) {
    let (h, f) = (config.hidden, config.ffn_dim);
    let n = trace.n;
    let d_logit = scale * bce_logit_grad(trace.prob, target);
    if d_logit == 0.0 {
        return;
    }
    grads.head_bias += d_logit;
    let mut dx = vec![0.0; n * h];
    for k in 0..h {
        let m = trace.dropout_mask.as_ref().map_or(1.0, |m| m[k]);
        grads.head_weights[k] += d_logit * trace.pooled[k] * m;
        dx[k] = d_logit * params.head_weights[k] * m;
    }
    for (l, cache) in trace.layers.iter().enumerate().rev() {
        let layer = &params.layers[l];
        let grad = &mut grads.layers[l];
        let d_resid2 = layer_norm_backward(&cache.ln2, n, h, &layer.ln2_gamma, &dx, &mut grad.ln2_gamma, &mut grad.ln2_beta);
        let d_act = linear_backward(&cache.ffn_act, n, &layer.w2, f, h, &d_resid2, &mut grad.w2, &mut grad.b2);
        let d_pre: Vec<f64> = d_act
            .iter()
            .zip(&cache.ffn_pre)
            .map(|(g, &x)| g * gelu_grad(x))
            .collect();
        let mut d_h1 = linear_backward(&cache.h1, n, &layer.w1, h, f, &d_pre, &mut grad.w1, &mut grad.b1);
        for (a, b) in d_h1.iter_mut().zip(&d_resid2) {
            *a += b;
        }
        let d_resid1 = layer_norm_backward(&cache.ln1, n, h, &layer.ln1_gamma, &d_h1, &mut grad.ln1_gamma, &mut grad.ln1_beta);
        let mut d_in = attention_backward(&cache.input, &cache.attention, layer, grad, config, &d_resid1);
        for (a, b) in d_in.iter_mut().zip(&d_resid1) {
            *a += b;
        }
        dx = d_in;
    }
    for (i, &id) in ids.iter().enumerate() {
        let g = &dx[i * h..(i + 1) * h];
        for k in 0..h {
            grads.token_embeddings[id * h + k] += g[k];
            grads.position_embeddings[i * h + k] += g[k];
        }
    }
}

/// One labeled, already-encoded example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub ids: Vec<usize>,
    pub attend: Vec<bool>,
    pub target: Label,
}

impl Example {
    pub fn new(ids: Vec<usize>, target: Label) -> Self {
        let attend = default_mask(&ids);
        Self { ids, attend, target }
    }
}

/// Mean BCE over the batch and its gradient for every parameter.
pub fn backward(
    batch: &[Example],
    params: &EncoderParams,
    config: &EncoderConfig,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, EncoderParams)> {
    if batch.is_empty() {
        return Err(EncoderError::EmptyBatch);
    }
    let mut grads = EncoderParams::zeros(config);
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for ex in batch {
        let trace = forward_trace(&ex.ids, &ex.attend, params, config, dropout_rng.as_deref_mut())?;
        loss += bce_loss(trace.prob, ex.target);
        backward_trace(&trace, ex.target, &ex.ids, params, config, scale, &mut grads);
    }
    if !grads.is_finite() {
        return Err(EncoderError::NonFiniteActivation);
    }
    Ok((loss * scale, grads))
}

/// Mean evaluation-mode loss over `examples`.
pub fn mean_loss(examples: &[Example], params: &EncoderParams, config: &EncoderConfig) -> Result<f64> {
    if examples.is_empty() {
        return Err(EncoderError::EmptyBatch);
    }
    let mut total = 0.0;
    for ex in examples {
        let trace = forward_trace(&ex.ids, &ex.attend, params, config, None)?;
        total += bce_loss(trace.prob, ex.target);
    }
    Ok(total / examples.len() as f64)
}

// ---- tokenization and fine-tuning ----------------------------------------

/// Maps word tokens to encoder ids: `[CLS] w1 ... wk`, truncated to
/// `max_len`; out-of-vocabulary words become UNK.
pub fn encode_tokens(tokens: &TokenSequence, vocab: &Vocabulary, max_len: usize) -> Vec<usize> {
    std::iter::once(CLS_ID)
        .chain(
            tokens
                .iter()
                .map(|t| vocab.index_of(t).map_or(UNK_ID, |i| i + RESERVED_IDS)),
        )
        .take(max_len)
        .collect()
}

/// Text preparation for the encoder: the cleansing pipeline when given,
/// otherwise lowercasing and whitespace splitting.
pub fn prepare_text(text: &str, cleansing: Option<&CleansingConfig>) -> TokenSequence {
    match cleansing {
        Some(c) => tokenize(&c.cleanse(text)),
        None => tokenize(&text.to_lowercase()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FineTuneConfig {
    pub learning_rate: f64,
    pub dropout_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub val_fraction: f64,
    pub split_seed: u64,
}

impl Default for FineTuneConfig {
    /// The tuned operating point: lr 6e-6, no dropout, 3 epochs, batch 16,
    /// Adam, 15% validation, split seed 2.
    fn default() -> Self {
        Self {
            learning_rate: 6e-6,
            dropout_rate: 0.0,
            epochs: 3,
            batch_size: 16,
            optimizer: OptimizerKind::Adam,
            val_fraction: 0.15,
            split_seed: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FineTuned {
    pub params: EncoderParams,
    pub config: EncoderConfig,
    pub vocab: Vocabulary,
    pub history: Vec<EpochRecord>,
}

impl FineTuned {
    pub fn predict_proba(&self, tokens: &TokenSequence) -> Result<f64> {
        let ids = encode_tokens(tokens, &self.vocab, self.config.max_len);
        Ok(encoder_forward(&ids, &self.params, &self.config, None)?.1.prob)
    }
}

/// Trains examples for `config.epochs` epochs of shuffled mini-batches and
/// records the mean training loss and validation F1 of every epoch.
pub fn train_examples(
    train: &[Example],
    val: &[Example],
    mut params: EncoderParams,
    encoder: &EncoderConfig,
    config: &FineTuneConfig,
) -> Result<(EncoderParams, Vec<EpochRecord>)> {
    if config.batch_size == 0 {
        return Err(EncoderError::InvalidConfig("batch_size must be >= 1".into()));
    }
    let optimizer = OptimizerConfig::new(config.optimizer, config.learning_rate);
    optimizer.validate()?;
    let mut state = OptimizerState::new();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(encoder.seed.wrapping_add(1));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(encoder.seed.wrapping_add(2));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut batch = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train[i].clone()));
            let (loss, grads) = backward(&batch, &params, encoder, Some(&mut dropout_rng))?;
            loss_sum += loss;
            batches += 1;
            let grad_bufs = grads.buffers();
            optimize::step(&mut params.buffers_mut(), &grad_bufs, &mut state, &optimizer)?;
        }
        let val_f1 = if val.is_empty() {
            None
        } else {
            let mut preds = Vec::with_capacity(val.len());
            for ex in val {
                let trace = forward_trace(&ex.ids, &ex.attend, &params, encoder, None)?;
                preds.push(Label::from(trace.prob >= 0.5));
            }
            let truth: Vec<Label> = val.iter().map(|e| e.target).collect();
            eval::evaluate(&preds, &truth).ok().map(|r| r.f1)
        };
        history.push(EpochRecord {
            epoch: epoch + 1,
            loss: if batches > 0 { loss_sum / batches as f64 } else { 0.0 },
            val_f1,
        });
    }
    Ok((params, history))
}

/// Full recipe: stratified split, vocabulary from the training part,
/// seeded initialization, then [`train_examples`].
pub fn fine_tune(
    records: &[TweetRecord],
    cleansing: Option<&CleansingConfig>,
    config: &FineTuneConfig,
    encoder: &EncoderConfig,
) -> Result<FineTuned> {
    let split = SplitSpec {
        val_fraction: config.val_fraction,
        seed: config.split_seed,
        stratified: true,
    };
    let (train_records, val_records) = corpus_io::stratified_split(records, &split)?;
    let train_tokens: Vec<TokenSequence> = train_records
        .iter()
        .map(|r| prepare_text(&r.text, cleansing))
        .collect();
    let vocab = build_vocab(&train_tokens, 1)?;
    let encoder = EncoderConfig {
        vocab_size: vocab.len() + RESERVED_IDS,
        dropout_rate: config.dropout_rate,
        ..*encoder
    };
    encoder.validate()?;
    let to_examples = |records: &[TweetRecord], tokens: Option<&[TokenSequence]>| -> Vec<Example> {
        records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let toks = match tokens {
                    Some(t) => t[i].clone(),
                    None => prepare_text(&r.text, cleansing),
                };
                Example::new(encode_tokens(&toks, &vocab, encoder.max_len), r.target.unwrap_or(0))
            })
            .collect()
    };
    let train = to_examples(&train_records, Some(&train_tokens));
    let val = to_examples(&val_records, None);
    let params = EncoderParams::init(&encoder)?;
    let (params, history) = train_examples(&train, &val, params, &encoder, config)?;
    Ok(FineTuned {
        params,
        config: encoder,
        vocab,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> EncoderConfig {
        EncoderConfig {
            layers: 1,
            hidden: 8,
            heads: 2,
            ffn_dim: 16,
            max_len: 6,
            vocab_size: 7,
            dropout_rate: 0.0,
            seed: 5,
        }
    }

    /// Random parameters with larger scale than the default init so that
    /// every path carries a measurable gradient.
    fn random_params(config: &EncoderConfig, seed: u64) -> EncoderParams {
        let mut params = EncoderParams::init(config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for buf in params.buffers_mut() {
            for v in buf.iter_mut() {
                *v += rng.random_range(-0.5..0.5);
            }
        }
        params
    }

    /// Independent attention reference: one head at a time, explicit index
    /// loops, no shared helpers.
    fn naive_attention(x: &[Vec<f64>], layer: &LayerParams, heads: usize, attend: &[bool]) -> Vec<Vec<f64>> {
        let n = x.len();
        let h = x[0].len();
        let dh = h / heads;
        let project = |w: &[f64], b: &[f64]| -> Vec<Vec<f64>> {
            (0..n)
                .map(|i| (0..h).map(|o| b[o] + (0..h).map(|k| x[i][k] * w[k * h + o]).sum::<f64>()).collect())
                .collect()
        };
        let (q, k, v) = (project(&layer.wq, &layer.bq), project(&layer.wk, &layer.bk), project(&layer.wv, &layer.bv));
        let mut concat = vec![vec![0.0; h]; n];
        for head in 0..heads {
            for i in 0..n {
                let mut logits = Vec::new();
                for j in 0..n {
                    let s: f64 = (0..dh).map(|d| q[i][head * dh + d] * k[j][head * dh + d]).sum();
                    logits.push(if attend[j] { s / (dh as f64).sqrt() } else { f64::NEG_INFINITY });
                }
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for d in 0..dh {
                    concat[i][head * dh + d] = (0..n).map(|j| e[j] / z * v[j][head * dh + d]).sum();
                }
            }
        }
        (0..n)
            .map(|i| (0..h).map(|o| layer.bo[o] + (0..h).map(|k| concat[i][k] * layer.wo[k * h + o]).sum::<f64>()).collect())
            .collect()
    }

    #[test]
    fn attention_matches_naive_reference() {
        let config = EncoderConfig { hidden: 4, heads: 2, ffn_dim: 8, ..tiny_config() };
        let params = random_params(&config, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        for attend in [[true, true, true], [true, false, true]] {
            let flat: Vec<f64> = x.iter().flatten().copied().collect();
            let out = multi_head_attention(&flat, &params.layers[0], &config, &attend).unwrap();
            let reference = naive_attention(&x, &params.layers[0], 2, &attend);
            for i in 0..3 {
                for o in 0..4 {
                    assert!((out.output[i * 4 + o] - reference[i][o]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn constant_logits_give_uniform_weights_and_masks_zero_columns() {
        let config = tiny_config();
        let mut params = random_params(&config, 2);
        params.layers[0].wk.fill(0.0);
        params.layers[0].bk.fill(0.0);
        let x: Vec<f64> = (0..4 * 8).map(|i| (i as f64 * 0.37).sin()).collect();
        let attend = [true, true, false, true];
        let out = multi_head_attention(&x, &params.layers[0], &config, &attend).unwrap();
        for head in 0..2 {
            for i in 0..4 {
                let row = &out.weights[(head * 4 + i) * 4..(head * 4 + i + 1) * 4];
                assert_eq!(row[2], 0.0);
                for j in [0, 1, 3] {
                    assert!((row[j] - 1.0 / 3.0).abs() < 1e-15);
                }
            }
        }
        let too_long = vec![0.0; 7 * 8];
        assert!(matches!(
            multi_head_attention(&too_long, &params.layers[0], &config, &[true; 7]),
            Err(EncoderError::SequenceTooLong { len: 7, max_len: 6 })
        ));
    }

    #[test]
    fn forward_contracts() {
        let config = tiny_config();
        let params = random_params(&config, 3);
        let ids = [CLS_ID, 4, 5];
        let a = encoder_forward(&ids, &params, &config, None).unwrap();
        let b = encoder_forward(&ids, &params, &config, None).unwrap();
        assert_eq!(a, b);

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let train = encoder_forward(&ids, &params, &config, Some(&mut rng)).unwrap();
        assert_eq!(train, a);

        let mut zero_head = params.clone();
        zero_head.head_weights.fill(0.0);
        zero_head.head_bias = 0.0;
        assert_eq!(encoder_forward(&ids, &zero_head, &config, None).unwrap().1.prob, 0.5);

        assert!(matches!(encoder_forward(&[4, 5], &params, &config, None), Err(EncoderError::MissingCls)));
        assert!(matches!(
            encoder_forward(&[CLS_ID, 9], &params, &config, None),
            Err(EncoderError::UnknownTokenId { id: 9, .. })
        ));
        assert!(matches!(
            encoder_forward(&[CLS_ID; 7], &params, &config, None),
            Err(EncoderError::SequenceTooLong { .. })
        ));
    }

    #[test]
    fn dropout_changes_training_forward_only() {
        let config = EncoderConfig { dropout_rate: 0.5, ..tiny_config() };
        let params = random_params(&config, 4);
        let ids = [CLS_ID, 3, 4, 5];
        let eval = encoder_forward(&ids, &params, &config, None).unwrap().1;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let outs: Vec<f64> = (0..8)
            .map(|_| encoder_forward(&ids, &params, &config, Some(&mut rng)).unwrap().1.logit)
            .collect();
        assert!(outs.iter().any(|&l| l != eval.logit));
    }

    #[test]
    fn pad_token_identity_is_irrelevant_when_masked() {
        let config = tiny_config();
        let params = random_params(&config, 5);
        let attend = [true, true, true, false, false];
        let a = forward_trace(&[CLS_ID, 3, 4, PAD_ID, PAD_ID], &attend, &params, &config, None).unwrap();
        let b = forward_trace(&[CLS_ID, 3, 4, 6, 5], &attend, &params, &config, None).unwrap();
        assert!((a.logit - b.logit).abs() < 1e-9);
    }

    #[test]
    fn bce_values() {
        assert!((bce_loss(0.5, 1) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bce_loss(0.5, 0) - std::f64::consts::LN_2).abs() < 1e-12);
        let perfect = bce_loss(1.0, 1);
        assert!(perfect > 0.0 && perfect < 1.1e-7);
        assert!(bce_loss(0.0, 1).is_finite());
    }

    /// Central finite differences on every parameter of a small model.
    fn max_relative_gradient_error(config: &EncoderConfig, batch: &[Example], params: &EncoderParams) -> f64 {
        let (_, grads) = backward(batch, params, config, None).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut probe = params.clone();
        let n_buffers = params.buffers().len();
        for b in 0..n_buffers {
            let len = params.buffers()[b].len();
            for i in 0..len {
                let orig = params.buffers()[b][i];
                probe.buffers_mut()[b][i] = orig + h;
                let plus = mean_loss(batch, &probe, config).unwrap();
                probe.buffers_mut()[b][i] = orig - h;
                let minus = mean_loss(batch, &probe, config).unwrap();
                probe.buffers_mut()[b][i] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let analytic = grads.buffers()[b][i];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let config = tiny_config();
        let params = random_params(&config, 6);
        let batch = [Example::new(vec![CLS_ID, 4], 1), Example::new(vec![CLS_ID, 5], 0)];
        let err = max_relative_gradient_error(&config, &batch, &params);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn duplicated_sample_keeps_gradient() {
        let config = tiny_config();
        let params = random_params(&config, 7);
        let ex = Example::new(vec![CLS_ID, 3, 4], 1);
        let (_, single) = backward(std::slice::from_ref(&ex), &params, &config, None).unwrap();
        let (_, double) = backward(&[ex.clone(), ex], &params, &config, None).unwrap();
        for (a, b) in single.buffers().iter().zip(double.buffers()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn saturated_prediction_has_no_bias_gradient() {
        let config = tiny_config();
        let mut params = random_params(&config, 8);
        params.head_bias = 40.0;
        let (_, grads) = backward(&[Example::new(vec![CLS_ID, 3], 1)], &params, &config, None).unwrap();
        assert!(grads.head_bias.abs() < 1e-6);
    }

    #[test]
    fn layer_norm_outputs_are_standardized() {
        let config = EncoderConfig { hidden: 16, heads: 4, ffn_dim: 32, max_len: 8, vocab_size: 10, ..tiny_config() };
        let params = random_params(&config, 9);
        let trace = forward_trace(&[CLS_ID, 3, 7, 9, 4], &[true; 5], &params, &config, None).unwrap();
        for xhat in trace.normalized_activations() {
            for row in xhat.chunks(16) {
                let mean = row.iter().sum::<f64>() / 16.0;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
                assert!(mean.abs() < 1e-6);
                assert!((var - 1.0).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn tensors_round_trip() {
        let config = tiny_config();
        let params = random_params(&config, 10);
        let tensors: Vec<(String, Vec<f64>)> = params
            .tensors(&config)
            .into_iter()
            .map(|t| {
                assert_eq!(t.shape.iter().product::<usize>(), t.data.len());
                (t.name, t.data.to_vec())
            })
            .collect();
        assert_eq!(EncoderParams::from_tensors(&config, tensors.clone()).unwrap(), params);
        let mut broken = tensors;
        broken.pop();
        assert!(EncoderParams::from_tensors(&config, broken).is_err());
    }

    #[test]
    fn encode_tokens_truncates_and_maps_unknowns() {
        let docs = [TokenSequence::from(&["fire", "flood"][..])];
        let vocab = build_vocab(&docs, 1).unwrap();
        let ids = encode_tokens(&TokenSequence::from(&["flood", "quake", "fire", "fire"][..]), &vocab, 4);
        assert_eq!(ids, [CLS_ID, 4, UNK_ID, 3]);
        assert_eq!(encode_tokens(&TokenSequence::default(), &vocab, 4), [CLS_ID]);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let config = tiny_config();
        let params = EncoderParams::init(&config).unwrap();
        let train = [Example::new(vec![CLS_ID, 3], 1)];
        let ft = FineTuneConfig { epochs: 0, ..FineTuneConfig::default() };
        let (out, history) = train_examples(&train, &[], params.clone(), &config, &ft).unwrap();
        assert_eq!(out, params);
        assert!(history.is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(EncoderConfig { heads: 3, ..tiny_config() }.validate().is_err());
        assert!(EncoderConfig { max_len: 1, ..tiny_config() }.validate().is_err());
        assert!(EncoderConfig { dropout_rate: 1.0, ..tiny_config() }.validate().is_err());
        assert!(EncoderConfig::default().validate().is_ok());
    }
}
