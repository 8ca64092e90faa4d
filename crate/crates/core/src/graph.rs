//! Builds the fusion pipeline, heads and losses on a [`Tape`], reading
//! parameters by name from a [`ParamStore`].

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::fusion::{MergerConfig, Variant};
use crate::heads::{DISC_PREFIX, GEN_PREFIX};
use crate::labels::LabelSet;
use crate::mat::Mat;
use crate::nn::LN_EPS;
use crate::store::{block_prefix, ParamStore};

/// Label values as an `HW×C_k` matrix with absent pixels zeroed.
pub fn label_rows(set: &LabelSet, k: usize) -> Mat {
    let l = &set.labels()[k];
    let c = l.channels();
    let mut m = Mat::zeros(set.pixels(), c);
    for p in 0..set.pixels() {
        if l.is_present(p) {
            m.row_mut(p)
                .iter_mut()
                .zip(l.pixel(p))
                .for_each(|(o, &v)| *o = v as f64);
        }
    }
    m
}

fn project(tape: &mut Tape, store: &ParamStore, set: &LabelSet, k: usize) -> Result<Var> {
    let name = &set.labels()[k].name;
    let x = tape.leaf(label_rows(set, k));
    let a = tape.param(store, &format!("proj.{name}.A"))?;
    let b = tape.param(store, &format!("proj.{name}.b"))?;
    let lin = tape.matmul_t(x, a)?;
    let pre = tape.add_row(lin, b)?;
    Ok(tape.gelu(pre))
}

fn transformer_block(tape: &mut Tape, store: &ParamStore, z: Var, m: usize, n: usize, heads: usize) -> Result<Var> {
    let pre = block_prefix(m);
    let p = |tape: &mut Tape, s: &str| tape.param(store, &format!("{pre}.{s}"));
    let ln1 = {
        let (g, b) = (p(tape, "ln1.gamma")?, p(tape, "ln1.beta")?);
        tape.layer_norm(z, g, b, LN_EPS)?
    };
    let wq = p(tape, "attn.wq")?;
    let wk = p(tape, "attn.wk")?;
    let wv = p(tape, "attn.wv")?;
    let q = tape.matmul(ln1, wq)?;
    let k = tape.matmul(ln1, wk)?;
    let v = tape.matmul(ln1, wv)?;
    let att = tape.grouped_attention(q, k, v, n, heads)?;
    let wo = p(tape, "attn.wo")?;
    let bo = p(tape, "attn.bo")?;
    let o = tape.matmul(att, wo)?;
    let msa = tape.add_row(o, bo)?;
    let zhat = tape.add(msa, z)?;

    let ln2 = {
        let (g, b) = (p(tape, "ln2.gamma")?, p(tape, "ln2.beta")?);
        tape.layer_norm(zhat, g, b, LN_EPS)?
    };
    let (w1, b1, w2, b2) = (p(tape, "mlp.w1")?, p(tape, "mlp.b1")?, p(tape, "mlp.w2")?, p(tape, "mlp.b2")?);
    let h = tape.matmul(ln2, w1)?;
    let h = tape.add_row(h, b1)?;
    let h = tape.gelu(h);
    let o = tape.matmul(h, w2)?;
    let o = tape.add_row(o, b2)?;
    tape.add(o, zhat)
}

/// Records TLAM or CLAM over all pixels of `set`; returns the `HW×d`
/// concept rows.
pub fn merge_on_tape(tape: &mut Tape, store: &ParamStore, config: &MergerConfig, set: &LabelSet) -> Result<Var> {
    let n = set.len();
    let mut tokens = Vec::with_capacity(n);
    for k in 0..n {
        let mut e = project(tape, store, set, k)?;
        let name = &set.labels()[k].name;
        match config.variant {
            Variant::Tlam => {
                let p = tape.param(store, &format!("enc.{name}"))?;
                e = tape.add_row(e, p)?;
            }
            Variant::Clam => {
                for m in 0..config.depth {
                    let a = tape.param(store, &format!("clam.{name}.{m}.A"))?;
                    let b = tape.param(store, &format!("clam.{name}.{m}.b"))?;
                    let lin = tape.matmul_t(e, a)?;
                    let pre = tape.add_row(lin, b)?;
                    e = tape.gelu(pre);
                }
            }
            Variant::Naive => {
                return Err(crate::error::Error::Contract("the naive merger has no parameters".into()));
            }
        }
        tokens.push(e);
    }
    let mut z = tape.interleave(&tokens)?;
    if config.variant == Variant::Tlam {
        for m in 0..config.depth {
            z = transformer_block(tape, store, z, m, n, config.heads)?;
        }
    }
    tape.group_mean(z, n)
}

fn mlp2(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w1 = tape.param(store, &format!("{prefix}.w1"))?;
    let b1 = tape.param(store, &format!("{prefix}.b1"))?;
    let w2 = tape.param(store, &format!("{prefix}.w2"))?;
    let b2 = tape.param(store, &format!("{prefix}.b2"))?;
    let h = tape.matmul(x, w1)?;
    let h = tape.add_row(h, b1)?;
    let h = tape.gelu(h);
    let o = tape.matmul(h, w2)?;
    tape.add_row(o, b2)
}

/// `HW×3` generated pixels.
pub fn generate_on_tape(tape: &mut Tape, store: &ParamStore, z: Var) -> Result<Var> {
    mlp2(tape, store, GEN_PREFIX, z)
}

/// Scalar mean discriminator score.
pub fn discriminate_on_tape(tape: &mut Tape, store: &ParamStore, z: Var, rgb: Var) -> Result<Var> {
    let x = tape.concat_cols(z, rgb)?;
    let s = mlp2(tape, store, DISC_PREFIX, x)?;
    Ok(tape.mean_all(s))
}

pub fn l2_on_tape(tape: &mut Tape, img: Var, target: Var) -> Result<Var> {
    let diff = tape.sub(img, target)?;
    let sq = tape.square(diff);
    Ok(tape.mean_all(sq))
}

/// `max(0, 1 − real) + max(0, 1 + fake)`.
pub fn hinge_d_on_tape(tape: &mut Tape, real: Var, fake: Var) -> Result<Var> {
    let r = tape.scale(real, -1.0);
    let r = tape.add_scalar(r, 1.0);
    let r = tape.relu(r);
    let f = tape.add_scalar(fake, 1.0);
    let f = tape.relu(f);
    tape.add(r, f)
}

pub fn hinge_g_on_tape(tape: &mut Tape, fake: Var) -> Var {
    tape.scale(fake, -1.0)
}
