//! Forward definitions of the label-transformer primitives.
//!
//! Every function here works on one pixel's token matrix (`N×d`, one row
//! per label). Gradients live in [`crate::autodiff`], which implements the
//! same maps on batched rows and is checked against these forward passes.

use crate::error::{Error, Result};
use crate::mat::{dot, Mat};
use crate::rng::Rng;

/// LayerNorm epsilon.
pub const LN_EPS: f64 = 1e-5;

/// Ratio of MLP hidden width to token width.
pub const MLP_RATIO: usize = 4;

const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_A: f64 = 0.044_715;

/// One label-token matrix, `N` rows of width `d`.
pub type TokenMatrix = Mat;

/// GeLU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

/// Exact derivative of [`gelu`].
pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// `A·x + b` with `A` of shape `d×C`.
pub fn linear(x: &[f64], a: &Mat, b: &[f64]) -> Result<Vec<f64>> {
    if a.cols != x.len() || a.rows != b.len() {
        return Err(Error::Shape(format!(
            "linear: A is {}×{}, x has {}, b has {}",
            a.rows,
            a.cols,
            x.len(),
            b.len()
        )));
    }
    Ok((0..a.rows).map(|i| dot(a.row(i), x) + b[i]).collect())
}

pub fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    x.iter()
        .zip(gamma.iter().zip(beta))
        .map(|(v, (g, b))| g * (v - mean) * inv + b)
        .collect()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gamma: Mat,
    pub beta: Mat,
}

impl LayerNormParams {
    pub fn identity(d: usize) -> Self {
        Self {
            gamma: Mat::filled(1, d, 1.0),
            beta: Mat::zeros(1, d),
        }
    }
}

/// Multi-head attention weights. The per-head maps are stored side by side:
/// head `j` of `wq` is columns `j·d_h .. (j+1)·d_h`, with `d_h = d / heads`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub heads: usize,
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Mat,
    pub bo: Mat,
}

impl AttentionParams {
    pub fn init(d: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        check_heads(d, heads)?;
        let dh = d / heads;
        Ok(Self {
            heads,
            wq: Mat::xavier(d, d, d, dh, rng),
            wk: Mat::xavier(d, d, d, dh, rng),
            wv: Mat::xavier(d, d, d, dh, rng),
            wo: Mat::xavier(d, d, d, d, rng),
            bo: Mat::zeros(1, d),
        })
    }

    pub fn width(&self) -> usize {
        self.wo.cols
    }
}

fn check_heads(d: usize, heads: usize) -> Result<()> {
    if heads == 0 || d == 0 || d % heads != 0 {
        return Err(Error::Contract(format!("width {d} is not divisible into {heads} heads")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1: LayerNormParams,
    pub attn: AttentionParams,
    pub ln2: LayerNormParams,
    pub mlp: MlpParams,
}

impl BlockParams {
    pub fn init(d: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        let dff = MLP_RATIO * d;
        let attn = AttentionParams::init(d, heads, rng)?;
        let mlp = MlpParams {
            w1: Mat::xavier(d, dff, d, dff, rng),
            b1: Mat::zeros(1, dff),
            w2: Mat::xavier(dff, d, dff, d, rng),
            b2: Mat::zeros(1, d),
        };
        Ok(Self {
            ln1: LayerNormParams::identity(d),
            attn,
            ln2: LayerNormParams::identity(d),
            mlp,
        })
    }

    fn check(&self, d: usize) -> Result<()> {
        let a = &self.attn;
        check_heads(d, a.heads)?;
        let dff = self.mlp.w1.cols;
        let ok = self.ln1.gamma.len() == d
            && self.ln1.beta.len() == d
            && self.ln2.gamma.len() == d
            && self.ln2.beta.len() == d
            && [&a.wq, &a.wk, &a.wv, &a.wo].iter().all(|m| (m.rows, m.cols) == (d, d))
            && a.bo.len() == d
            && self.mlp.w1.rows == d
            && self.mlp.b1.len() == dff
            && (self.mlp.w2.rows, self.mlp.w2.cols) == (dff, d)
            && self.mlp.b2.len() == d;
        if !ok {
            return Err(Error::Shape(format!("block parameters inconsistent with width {d}")));
        }
        Ok(())
    }
}

pub fn layer_norm_rows(z: &Mat, ln: &LayerNormParams) -> Mat {
    let mut out = Mat::zeros(z.rows, z.cols);
    for i in 0..z.rows {
        out.row_mut(i)
            .copy_from_slice(&layer_norm(z.row(i), &ln.gamma.data, &ln.beta.data, LN_EPS));
    }
    out
}

/// Multi-head self-attention over the rows of `z`.
pub fn multi_head_self_attention(z: &TokenMatrix, p: &AttentionParams) -> Result<TokenMatrix> {
    multi_head_self_attention_counted(z, p, &mut 0)
}

/// As [`multi_head_self_attention`], adding the multiply-accumulates spent
/// in the `Q·Kᵀ` and `A·V` products to `macs`.
pub fn multi_head_self_attention_counted(
    z: &TokenMatrix,
    p: &AttentionParams,
    macs: &mut u64,
) -> Result<TokenMatrix> {
    let d = p.width();
    if z.cols != d {
        return Err(Error::Shape(format!("tokens have width {}, attention expects {d}", z.cols)));
    }
    check_heads(d, p.heads)?;
    let n = z.rows;
    let dh = d / p.heads;
    let q = z.matmul(&p.wq)?;
    let k = z.matmul(&p.wk)?;
    let v = z.matmul(&p.wv)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut concat = Mat::zeros(n, d);
    let mut scores = vec![0.0; n];
    for h in 0..p.heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..n {
            let qi = &q.row(i)[cols.clone()];
            for (j, s) in scores.iter_mut().enumerate() {
                *s = dot(qi, &k.row(j)[cols.clone()]) * scale;
            }
            let a = softmax(&scores);
            let out = &mut concat.row_mut(i)[cols.clone()];
            for (j, &aij) in a.iter().enumerate() {
                let vj = &v.row(j)[cols.clone()];
                out.iter_mut().zip(vj).for_each(|(o, &x)| *o += aij * x);
            }
        }
        *macs += 2 * (n * n * dh) as u64;
    }
    concat.matmul(&p.wo)?.add_row(&p.bo)
}

/// `MSA(LN(Z)) + Z`.
pub fn msa_block(z: &TokenMatrix, p: &BlockParams) -> Result<TokenMatrix> {
    msa_block_counted(z, p, &mut 0)
}

pub fn msa_block_counted(z: &TokenMatrix, p: &BlockParams, macs: &mut u64) -> Result<TokenMatrix> {
    p.check(z.cols)?;
    let normed = layer_norm_rows(z, &p.ln1);
    multi_head_self_attention_counted(&normed, &p.attn, macs)?.add(z)
}

/// `MLP(LN(Ẑ)) + Ẑ`, applied token by token.
pub fn mlp_block(z: &TokenMatrix, p: &BlockParams) -> Result<TokenMatrix> {
    p.check(z.cols)?;
    let normed = layer_norm_rows(z, &p.ln2);
    let hidden = normed.matmul(&p.mlp.w1)?.add_row(&p.mlp.b1)?.map(gelu);
    hidden.matmul(&p.mlp.w2)?.add_row(&p.mlp.b2)?.add(z)
}

pub fn transformer_block(z: &TokenMatrix, p: &BlockParams) -> Result<TokenMatrix> {
    transformer_block_counted(z, p, &mut 0)
}

pub fn transformer_block_counted(z: &TokenMatrix, p: &BlockParams, macs: &mut u64) -> Result<TokenMatrix> {
    let mid = msa_block_counted(z, p, macs)?;
    mlp_block(&mid, p)
}
