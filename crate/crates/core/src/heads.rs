//! Per-pixel generator and discriminator heads and the training losses.
//!
//! Both heads are two-layer MLPs applied at every pixel with the row-vector
//! convention `y = gelu(x·W1 + b1)·W2 + b2`. The generator maps a concept
//! vector to RGB; the discriminator scores `concat(z, rgb)` and averages the
//! pixel scores.

use crate::error::{Error, Result};
use crate::fusion::ConceptTensor;
use crate::mat::Mat;
use crate::nn::gelu;
use crate::rng::Rng;
use crate::store::ParamStore;
use crate::tensor::Tensor;

pub const DEFAULT_GEN_HIDDEN: usize = 64;
pub const DEFAULT_DISC_HIDDEN: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp2 {
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
}

impl Mlp2 {
    pub fn init(inp: usize, hidden: usize, out: usize, rng: &mut Rng) -> Self {
        Self {
            w1: Mat::xavier(inp, hidden, inp, hidden, rng),
            b1: Mat::zeros(1, hidden),
            w2: Mat::xavier(hidden, out, hidden, out, rng),
            b2: Mat::zeros(1, out),
        }
    }

    pub fn forward(&self, x: &Mat) -> Result<Mat> {
        let h = x.matmul(&self.w1)?.add_row(&self.b1)?.map(gelu);
        h.matmul(&self.w2)?.add_row(&self.b2)
    }

    fn put(&self, store: &mut ParamStore, prefix: &str) {
        store.insert(format!("{prefix}.w1"), self.w1.clone());
        store.insert(format!("{prefix}.b1"), self.b1.clone());
        store.insert(format!("{prefix}.w2"), self.w2.clone());
        store.insert(format!("{prefix}.b2"), self.b2.clone());
    }

    fn take(store: &ParamStore, prefix: &str) -> Result<Self> {
        let g = |n: &str| store.get(&format!("{prefix}.{n}")).cloned();
        Ok(Self {
            w1: g("w1")?,
            b1: g("b1")?,
            w2: g("w2")?,
            b2: g("b2")?,
        })
    }
}

pub const GEN_PREFIX: &str = "gen";
pub const DISC_PREFIX: &str = "disc";

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// `d → d_g → 3`.
    pub generator: Mlp2,
    /// `(d+3) → d_c → 1`.
    pub discriminator: Mlp2,
}

impl HeadParams {
    pub fn init(d: usize, gen_hidden: usize, disc_hidden: usize, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        Self {
            generator: Mlp2::init(d, gen_hidden, 3, &mut rng),
            discriminator: Mlp2::init(d + 3, disc_hidden, 1, &mut rng),
        }
    }

    pub fn to_store(&self) -> ParamStore {
        let mut s = ParamStore::new();
        self.generator.put(&mut s, GEN_PREFIX);
        self.discriminator.put(&mut s, DISC_PREFIX);
        s
    }

    pub fn from_store(s: &ParamStore) -> Result<Self> {
        Ok(Self {
            generator: Mlp2::take(s, GEN_PREFIX)?,
            discriminator: Mlp2::take(s, DISC_PREFIX)?,
        })
    }
}

fn image_from_rows(h: usize, w: usize, rows: Mat) -> Result<Tensor> {
    Tensor::from_f64(vec![h, w, rows.cols], rows.data)
}

/// Rows of an `H×W×3` image as an `HW×3` matrix.
pub fn image_rows(img: &Tensor) -> Result<Mat> {
    match *img.dims() {
        [h, w, 3] => Mat::new(h * w, 3, img.to_f64_vec()),
        _ => Err(Error::Shape(format!("expected an H×W×3 image, got {:?}", img.dims()))),
    }
}

/// Generates an `H×W×3` image; no output squashing.
pub fn forward_generate(z: &ConceptTensor, hp: &HeadParams) -> Result<Tensor> {
    if hp.generator.w1.rows != z.channels() {
        return Err(Error::Shape(format!(
            "generator expects width {}, concept has {}",
            hp.generator.w1.rows,
            z.channels()
        )));
    }
    let rgb = hp.generator.forward(&z.to_mat())?;
    image_from_rows(z.height(), z.width(), rgb)
}

/// Mean of per-pixel discriminator scores on `concat(z, rgb)`.
pub fn discriminator_score(z: &ConceptTensor, img: &Tensor, hp: &HeadParams) -> Result<f64> {
    let rgb = image_rows(img)?;
    if img.dims()[..2] != [z.height(), z.width()] {
        return Err(Error::Shape(format!(
            "image {:?} vs concept {}×{}",
            img.dims(),
            z.height(),
            z.width()
        )));
    }
    if hp.discriminator.w1.rows != z.channels() + 3 {
        return Err(Error::Shape("discriminator width does not match concept".into()));
    }
    let zm = z.to_mat();
    let mut x = Mat::zeros(zm.rows, zm.cols + 3);
    for p in 0..zm.rows {
        let row = x.row_mut(p);
        row[..zm.cols].copy_from_slice(zm.row(p));
        row[zm.cols..].copy_from_slice(rgb.row(p));
    }
    let scores = hp.discriminator.forward(&x)?;
    Ok(scores.data.iter().sum::<f64>() / scores.len() as f64)
}

pub fn hinge_d_loss(real_score: f64, fake_score: f64) -> f64 {
    (1.0 - real_score).max(0.0) + (1.0 + fake_score).max(0.0)
}

pub fn hinge_g_loss(fake_score: f64) -> f64 {
    -fake_score
}

/// Mean squared difference over all elements.
pub fn l2_loss(img: &Tensor, target: &Tensor) -> Result<f64> {
    if img.dims() != target.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", img.dims(), target.dims())));
    }
    let a = img.to_f64_vec();
    let b = target.to_f64_vec();
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}
