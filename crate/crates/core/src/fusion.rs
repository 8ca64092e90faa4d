//! Label-merging front ends.
//!
//! TLAM projects every label token at a pixel into a shared width `d`,
//! adds a per-label encoding, runs the token set through `l` transformer
//! blocks and averages the result. CLAM replaces the transformer with
//! per-label stacked affine+GeLU layers; the naive merger concatenates raw
//! channels. All three work on each pixel independently.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelSet;
use crate::mat::Mat;
use crate::nn::{self, BlockParams};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const DEFAULT_WIDTH: usize = 96;
pub const DEFAULT_DEPTH: usize = 3;
pub const DEFAULT_HEADS: usize = 3;

/// Standard deviation of the label-encoding initialization.
pub const ENCODING_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Tlam,
    Clam,
    Naive,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Tlam => "tlam",
            Variant::Clam => "clam",
            Variant::Naive => "naive",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tlam" => Ok(Variant::Tlam),
            "clam" => Ok(Variant::Clam),
            "naive" => Ok(Variant::Naive),
            other => Err(Error::Contract(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelBinding {
    pub name: String,
    pub channels: usize,
}

impl LabelBinding {
    pub fn from_set(set: &LabelSet) -> Vec<LabelBinding> {
        set.labels()
            .iter()
            .map(|l| LabelBinding {
                name: l.name.clone(),
                channels: l.channels(),
            })
            .collect()
    }
}

/// Affine map `x ↦ A·x + b` with `A` of shape `out×in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub a: Mat,
    pub b: Mat,
}

impl Affine {
    pub fn init(out: usize, inp: usize, rng: &mut Rng) -> Self {
        Self {
            a: Mat::xavier(out, inp, inp, out, rng),
            b: Mat::zeros(1, out),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergerConfig {
    pub variant: Variant,
    /// Token width `d`.
    pub width: usize,
    /// Transformer blocks (TLAM) or stacked layers (CLAM), `l`.
    pub depth: usize,
    pub heads: usize,
}

impl Default for MergerConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Tlam,
            width: DEFAULT_WIDTH,
            depth: DEFAULT_DEPTH,
            heads: DEFAULT_HEADS,
        }
    }
}

/// Learnable parameters of a merger, bound to label names.
#[derive(Debug, Clone, PartialEq)]
pub struct MergerParams {
    pub config: MergerConfig,
    pub labels: Vec<LabelBinding>,
    /// Per-label projection `A_k` (`d×C_k`), `b_k`.
    pub projections: Vec<Affine>,
    /// Per-label encodings `p_k` (TLAM only).
    pub encodings: Vec<Mat>,
    /// Transformer blocks (TLAM only).
    pub blocks: Vec<BlockParams>,
    /// `clam[k][m]`: depth-`m` layer of label `k` (CLAM only).
    pub clam: Vec<Vec<Affine>>,
}

impl MergerParams {
    /// Initializes parameters for `labels`: Glorot-uniform weights, zero
    /// biases, unit LayerNorm gains and `N(0, 0.02²)` encodings.
    pub fn init(config: MergerConfig, labels: Vec<LabelBinding>, seed: u64) -> Result<Self> {
        let mut rng = Rng::new(seed);
        let d = config.width;
        let (mut projections, mut encodings, mut blocks, mut clam) = (vec![], vec![], vec![], vec![]);
        if config.variant != Variant::Naive {
            if d == 0 {
                return Err(Error::Contract("token width must be at least 1".into()));
            }
            for l in &labels {
                projections.push(Affine::init(d, l.channels, &mut rng));
            }
        }
        match config.variant {
            Variant::Tlam => {
                for _ in &labels {
                    let p = (0..d).map(|_| ENCODING_INIT_STD * rng.normal()).collect();
                    encodings.push(Mat::row_vector(p));
                }
                for _ in 0..config.depth {
                    blocks.push(BlockParams::init(d, config.heads, &mut rng)?);
                }
            }
            Variant::Clam => {
                for _ in &labels {
                    clam.push((0..config.depth).map(|_| Affine::init(d, d, &mut rng)).collect());
                }
            }
            Variant::Naive => {}
        }
        Ok(Self {
            config,
            labels,
            projections,
            encodings,
            blocks,
            clam,
        })
    }

    pub fn width(&self) -> usize {
        self.config.width
    }

    /// For each label of `set`, the index of its binding.
    pub fn bind(&self, set: &LabelSet) -> Result<Vec<usize>> {
        set.labels()
            .iter()
            .map(|l| {
                let k = self
                    .labels
                    .iter()
                    .position(|b| b.name == l.name)
                    .ok_or_else(|| Error::UnboundLabel(l.name.clone()))?;
                if self.labels[k].channels != l.channels() {
                    return Err(Error::Shape(format!(
                        "label `{}` has {} channels, parameters expect {}",
                        l.name,
                        l.channels(),
                        self.labels[k].channels
                    )));
                }
                Ok(k)
            })
            .collect()
    }
}

/// `H×W×C` f64 fusion output.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptTensor(Tensor);

impl ConceptTensor {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.rank() != 3 {
            return Err(Error::Shape(format!("concept tensor must be H×W×d, got {:?}", t.dims())));
        }
        t.as_f64()?;
        Ok(Self(t))
    }

    pub fn from_pixels(height: usize, width: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(Tensor::from_f64(vec![height, width, d], data)?)
    }

    pub fn height(&self) -> usize {
        self.0.dims()[0]
    }

    pub fn width(&self) -> usize {
        self.0.dims()[1]
    }

    pub fn channels(&self) -> usize {
        self.0.dims()[2]
    }

    pub fn pixels(&self) -> usize {
        self.height() * self.width()
    }

    pub fn data(&self) -> &[f64] {
        self.0.as_f64().expect("f64 by construction")
    }

    pub fn pixel(&self, p: usize) -> &[f64] {
        let d = self.channels();
        &self.data()[p * d..(p + 1) * d]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    /// Pixels as rows of an `HW×d` matrix.
    pub fn to_mat(&self) -> Mat {
        Mat::new(self.pixels(), self.channels(), self.data().to_vec()).expect("consistent dims")
    }

    pub fn is_finite(&self) -> bool {
        self.0.all_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Merged {
    pub concept: ConceptTensor,
    /// Multiply-accumulates spent in attention score and mixing products.
    pub attention_macs: u64,
}

/// Execution options for the pixel loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Exec {
    /// Worker threads; 1 runs inline.
    pub threads: usize,
    /// Pixels per work item.
    pub chunk: usize,
}

impl Default for Exec {
    fn default() -> Self {
        Self { threads: 1, chunk: 64 }
    }
}

impl Exec {
    pub fn with_threads(threads: usize) -> Self {
        Self {
            threads: threads.max(1),
            ..Self::default()
        }
    }
}

/// Projects one label token: absent tokens are replaced by the zero vector
/// before the map, so they come out as `gelu(b_k)`.
pub fn project_label(x: &[f64], present: bool, proj: &Affine) -> Result<Vec<f64>> {
    let zero;
    let input = if present {
        x
    } else {
        zero = vec![0.0; x.len()];
        &zero
    };
    let mut y = nn::linear(input, &proj.a, &proj.b.data)?;
    y.iter_mut().for_each(|v| *v = nn::gelu(*v));
    Ok(y)
}

/// Exact attention multiply-accumulate count of a TLAM forward pass:
/// `HW · l · h · 2 · N² · (d/h)`.
pub fn count_attention_macs(n_labels: usize, d: usize, heads: usize, depth: usize, pixels: usize) -> u64 {
    let dh = (d / heads) as u64;
    let n = n_labels as u64;
    pixels as u64 * depth as u64 * heads as u64 * 2 * n * n * dh
}

fn projected_tokens(set: &LabelSet, p: &MergerParams, bound: &[usize], pix: usize) -> Result<Mat> {
    let d = p.width();
    let mut tokens = Mat::zeros(set.len(), d);
    for (k, (label, &b)) in set.labels().iter().zip(bound).enumerate() {
        let x: Vec<f64> = label.pixel(pix).iter().map(|&v| v as f64).collect();
        let e = project_label(&x, label.is_present(pix), &p.projections[b])?;
        tokens.row_mut(k).copy_from_slice(&e);
    }
    Ok(tokens)
}

fn average_rows(tokens: &Mat, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for k in 0..tokens.rows {
        out.iter_mut().zip(tokens.row(k)).for_each(|(o, &t)| *o += t);
    }
    let n = tokens.rows as f64;
    out.iter_mut().for_each(|v| *v /= n);
}

fn tlam_pixel(set: &LabelSet, p: &MergerParams, bound: &[usize], pix: usize, out: &mut [f64]) -> Result<u64> {
    let mut tokens = projected_tokens(set, p, bound, pix)?;
    for (k, &b) in bound.iter().enumerate() {
        tokens
            .row_mut(k)
            .iter_mut()
            .zip(&p.encodings[b].data)
            .for_each(|(t, &e)| *t += e);
    }
    let mut macs = 0;
    for block in &p.blocks {
        tokens = nn::transformer_block_counted(&tokens, block, &mut macs)?;
    }
    average_rows(&tokens, out);
    Ok(macs)
}

fn clam_pixel(set: &LabelSet, p: &MergerParams, bound: &[usize], pix: usize, out: &mut [f64]) -> Result<u64> {
    let mut tokens = projected_tokens(set, p, bound, pix)?;
    for (k, &b) in bound.iter().enumerate() {
        let mut v = tokens.row(k).to_vec();
        for layer in &p.clam[b] {
            v = nn::linear(&v, &layer.a, &layer.b.data)?;
            v.iter_mut().for_each(|x| *x = nn::gelu(*x));
        }
        tokens.row_mut(k).copy_from_slice(&v);
    }
    average_rows(&tokens, out);
    Ok(0)
}

type PixelFn = fn(&LabelSet, &MergerParams, &[usize], usize, &mut [f64]) -> Result<u64>;

fn run_pixels(set: &LabelSet, p: &MergerParams, exec: Exec, f: PixelFn) -> Result<Merged> {
    let bound = p.bind(set)?;
    let d = p.width();
    let (h, w) = (set.height(), set.width());
    let mut data = vec![0.0; h * w * d];
    let chunk = exec.chunk.max(1);
    let work = |(c, out): (usize, &mut [f64])| -> Result<u64> {
        let mut macs = 0;
        for (i, px) in out.chunks_mut(d).enumerate() {
            macs += f(set, p, &bound, c * chunk + i, px)?;
        }
        Ok(macs)
    };
    let macs: Vec<Result<u64>> = if exec.threads <= 1 {
        data.chunks_mut(chunk * d).enumerate().map(work).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(exec.threads)
            .build()
            .map_err(|e| Error::Contract(format!("thread pool: {e}")))?;
        pool.install(|| data.par_chunks_mut(chunk * d).enumerate().map(work).collect())
    };
    let attention_macs = macs.into_iter().sum::<Result<u64>>()?;
    Ok(Merged {
        concept: ConceptTensor::from_pixels(h, w, d, data)?,
        attention_macs,
    })
}

fn expect_variant(p: &MergerParams, v: Variant) -> Result<()> {
    if p.config.variant != v {
        return Err(Error::Contract(format!(
            "parameters are for {}, not {v}",
            p.config.variant
        )));
    }
    Ok(())
}

pub fn tlam_merge(set: &LabelSet, p: &MergerParams) -> Result<Merged> {
    tlam_merge_with(set, p, Exec::default())
}

pub fn tlam_merge_with(set: &LabelSet, p: &MergerParams, exec: Exec) -> Result<Merged> {
    expect_variant(p, Variant::Tlam)?;
    run_pixels(set, p, exec, tlam_pixel)
}

pub fn clam_merge(set: &LabelSet, p: &MergerParams) -> Result<Merged> {
    clam_merge_with(set, p, Exec::default())
}

pub fn clam_merge_with(set: &LabelSet, p: &MergerParams, exec: Exec) -> Result<Merged> {
    expect_variant(p, Variant::Clam)?;
    run_pixels(set, p, exec, clam_pixel)
}

/// Channel-wise concatenation in label order (`H×W×ΣC_k`, f32).
pub fn naive_concat(set: &LabelSet) -> Tensor {
    let total = set.total_channels();
    let mut out = Vec::with_capacity(set.pixels() * total);
    for p in 0..set.pixels() {
        for l in set.labels() {
            out.extend_from_slice(l.pixel(p));
        }
    }
    Tensor::from_f32(vec![set.height(), set.width(), total], out).expect("validated label set")
}

/// Dispatches on the parameters' variant. The naive merger ignores every
/// parameter and returns the concatenation widened to f64.
pub fn merge(set: &LabelSet, p: &MergerParams, exec: Exec) -> Result<Merged> {
    match p.config.variant {
        Variant::Tlam => tlam_merge_with(set, p, exec),
        Variant::Clam => clam_merge_with(set, p, exec),
        Variant::Naive => Ok(Merged {
            concept: ConceptTensor::new(naive_concat(set).cast(crate::tensor::DType::F64))?,
            attention_macs: 0,
        }),
    }
}
