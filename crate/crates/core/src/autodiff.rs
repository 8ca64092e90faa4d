//! Reverse-mode differentiation over a recorded tape of matrix operations.
//!
//! Nodes are appended in evaluation order, so the tape is already
//! topologically sorted; [`Tape::backward`] walks it once in reverse.
//! Token batches are laid out pixel-major: the `N` tokens of pixel `p`
//! occupy rows `p·N .. (p+1)·N`, which is what [`Tape::grouped_attention`]
//! and [`Tape::group_mean`] expect.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::mat::{dot, Mat};
use crate::nn::{gelu, gelu_grad, softmax};
use crate::store::ParamStore;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Gelu(Var),
    Square(Var),
    Relu(Var),
    Scale(Var, f64),
    AddScalar(Var),
    MeanAll(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        group: usize,
        heads: usize,
        /// Softmax weights, `[pixel][head][i][j]` flattened.
        probs: Vec<f64>,
    },
    GroupMean(Var, usize),
    Interleave(Vec<Var>),
    ConcatCols(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
    attention_macs: u64,
}

fn shape_err(what: &str, a: &Mat, b: &Mat) -> Error {
    Error::Shape(format!(
        "{what}: {}×{} with {}×{}",
        a.rows, a.cols, b.rows, b.cols
    ))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    /// Multiply-accumulates recorded by attention nodes so far.
    pub fn attention_macs(&self) -> u64 {
        self.attention_macs
    }

    /// A leaf that receives no name; gradients are still available by `Var`.
    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A named parameter leaf read from `store`. Repeated requests return the
    /// same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let v = self.leaf(store.get(name)?.clone());
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`; used for column-convention weights such as `A_k`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_t(self.value(b))?;
        Ok(self.push(out, Op::MatMulT(a, b)))
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let out = self.value(x).add_row(self.value(bias))?;
        Ok(self.push(out, Op::AddRow(x, bias)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        x.same_shape(y)?;
        let out = Mat {
            rows: x.rows,
            cols: x.cols,
            data: x.data.iter().zip(&y.data).map(|(p, q)| p - q).collect(),
        };
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu);
        self.push(out, Op::Gelu(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        self.push(out, Op::Square(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| c * v);
        self.push(out, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::AddScalar(x))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let m = self.value(x);
        let mean = m.data.iter().sum::<f64>() / m.len() as f64;
        self.push(Mat::filled(1, 1, mean), Op::MeanAll(x))
    }

    /// Row-wise LayerNorm with biased variance.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xm = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.len() != xm.cols || b.len() != xm.cols {
            return Err(shape_err("layer_norm", xm, g));
        }
        let d = xm.cols as f64;
        let mut xhat = Mat::zeros(xm.rows, xm.cols);
        let mut out = Mat::zeros(xm.rows, xm.cols);
        let mut inv_std = Vec::with_capacity(xm.rows);
        for i in 0..xm.rows {
            let row = xm.row(i);
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            let (xh, o) = (xhat.row_mut(i), &mut out.data[i * xm.cols..(i + 1) * xm.cols]);
            for c in 0..row.len() {
                // Same association as nn::layer_norm so both paths agree bitwise.
                o[c] = g.data[c] * (row[c] - mean) * inv + b.data[c];
                xh[c] = (row[c] - mean) * inv;
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// Multi-head scaled dot-product attention within each group of `group`
    /// consecutive rows. `q`, `k`, `v` are `rows×d`; head `h` uses columns
    /// `h·d/heads .. (h+1)·d/heads`.
    pub fn grouped_attention(&mut self, q: Var, k: Var, v: Var, group: usize, heads: usize) -> Result<Var> {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        qm.same_shape(km)?;
        qm.same_shape(vm)?;
        let d = qm.cols;
        if group == 0 || qm.rows % group != 0 || heads == 0 || d % heads != 0 {
            return Err(Error::Shape(format!(
                "attention over {} rows of width {d} in groups of {group} with {heads} heads",
                qm.rows
            )));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let groups = qm.rows / group;
        let mut out = Mat::zeros(qm.rows, d);
        let mut probs = Vec::with_capacity(groups * heads * group * group);
        let mut scores = vec![0.0; group];
        for g in 0..groups {
            let base = g * group;
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                for i in 0..group {
                    let qi = &qm.row(base + i)[cols.clone()];
                    for (j, s) in scores.iter_mut().enumerate() {
                        *s = dot(qi, &km.row(base + j)[cols.clone()]) * scale;
                    }
                    let a = softmax(&scores);
                    let o = &mut out.data[(base + i) * d + h * dh..(base + i) * d + (h + 1) * dh];
                    for (j, &aij) in a.iter().enumerate() {
                        let vj = &vm.row(base + j)[cols.clone()];
                        o.iter_mut().zip(vj).for_each(|(o, &x)| *o += aij * x);
                    }
                    probs.extend_from_slice(&a);
                }
            }
        }
        self.attention_macs += (groups * heads * 2 * group * group * dh) as u64;
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                group,
                heads,
                probs,
            },
        ))
    }

    /// Mean over each group of `group` consecutive rows, summed in row order.
    pub fn group_mean(&mut self, x: Var, group: usize) -> Result<Var> {
        let xm = self.value(x);
        if group == 0 || xm.rows % group != 0 {
            return Err(Error::Shape(format!("{} rows in groups of {group}", xm.rows)));
        }
        let mut out = Mat::zeros(xm.rows / group, xm.cols);
        for g in 0..out.rows {
            let o = &mut out.data[g * xm.cols..(g + 1) * xm.cols];
            for r in 0..group {
                o.iter_mut().zip(xm.row(g * group + r)).for_each(|(o, &v)| *o += v);
            }
            o.iter_mut().for_each(|v| *v /= group as f64);
        }
        Ok(self.push(out, Op::GroupMean(x, group)))
    }

    /// Interleaves `k` equally shaped inputs row by row: output row
    /// `p·k + i` is row `p` of input `i`.
    pub fn interleave(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = self
            .value(*inputs.first().ok_or_else(|| Error::Shape("interleave of nothing".into()))?)
            .clone();
        let n = inputs.len();
        let mut out = Mat::zeros(first.rows * n, first.cols);
        for (i, &v) in inputs.iter().enumerate() {
            let m = self.value(v);
            m.same_shape(&first)?;
            for p in 0..m.rows {
                out.row_mut(p * n + i).copy_from_slice(m.row(p));
            }
        }
        Ok(self.push(out, Op::Interleave(inputs.to_vec())))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (am, bm) = (self.value(a), self.value(b));
        if am.rows != bm.rows {
            return Err(shape_err("concat_cols", am, bm));
        }
        let mut out = Mat::zeros(am.rows, am.cols + bm.cols);
        for r in 0..am.rows {
            let row = out.row_mut(r);
            row[..am.cols].copy_from_slice(am.row(r));
            row[am.cols..].copy_from_slice(bm.row(r));
        }
        Ok(self.push(out, Op::ConcatCols(a, b)))
    }

    /// Gradients of the scalar `loss` with respect to every node recorded
    /// before it.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if (lv.rows, lv.cols) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {}×{}",
                lv.rows, lv.cols
            )));
        }
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::filled(1, 1, 1.0));
        let mut visited = 0;
        for idx in (0..=loss.0).rev() {
            visited += 1;
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &gy, &mut grads)?;
            grads[idx] = Some(gy);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
            visited,
        })
    }

    fn propagate(&self, idx: usize, gy: &Mat, grads: &mut [Option<Mat>]) -> Result<()> {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, g: Mat| -> Result<()> {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                acc(*a, gy.matmul_t(val(*b))?)?;
                acc(*b, val(*a).t_matmul(gy)?)?;
            }
            Op::MatMulT(a, b) => {
                acc(*a, gy.matmul(val(*b))?)?;
                acc(*b, gy.t_matmul(val(*a))?)?;
            }
            Op::AddRow(x, b) => {
                let mut gb = Mat::zeros(1, gy.cols);
                for r in 0..gy.rows {
                    gb.data.iter_mut().zip(gy.row(r)).for_each(|(s, &g)| *s += g);
                }
                acc(*x, gy.clone())?;
                acc(*b, gb)?;
            }
            Op::Add(a, b) => {
                acc(*a, gy.clone())?;
                acc(*b, gy.clone())?;
            }
            Op::Sub(a, b) => {
                acc(*a, gy.clone())?;
                acc(*b, gy.map(|g| -g))?;
            }
            Op::Gelu(x) => {
                let xv = val(*x);
                let data = xv.data.iter().zip(&gy.data).map(|(&v, &g)| g * gelu_grad(v)).collect();
                acc(*x, Mat::new(xv.rows, xv.cols, data)?)?;
            }
            Op::Square(x) => {
                let xv = val(*x);
                let data = xv.data.iter().zip(&gy.data).map(|(&v, &g)| 2.0 * v * g).collect();
                acc(*x, Mat::new(xv.rows, xv.cols, data)?)?;
            }
            Op::Relu(x) => {
                let xv = val(*x);
                let data = xv
                    .data
                    .iter()
                    .zip(&gy.data)
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                acc(*x, Mat::new(xv.rows, xv.cols, data)?)?;
            }
            Op::Scale(x, c) => acc(*x, gy.map(|g| c * g))?,
            Op::AddScalar(x) => acc(*x, gy.clone())?,
            Op::MeanAll(x) => {
                let xv = val(*x);
                acc(*x, Mat::filled(xv.rows, xv.cols, gy.data[0] / xv.len() as f64))?;
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let g = val(*gamma);
                let cols = xhat.cols;
                let d = cols as f64;
                let mut dx = Mat::zeros(xhat.rows, cols);
                let mut dgamma = Mat::zeros(1, cols);
                let mut dbeta = Mat::zeros(1, cols);
                let mut dxhat = vec![0.0; cols];
                for r in 0..xhat.rows {
                    let (gr, xh) = (gy.row(r), xhat.row(r));
                    for c in 0..cols {
                        dgamma.data[c] += gr[c] * xh[c];
                        dbeta.data[c] += gr[c];
                        dxhat[c] = gr[c] * g.data[c];
                    }
                    let mean_d = dxhat.iter().sum::<f64>() / d;
                    let mean_dx = dot(&dxhat, xh) / d;
                    let row = dx.row_mut(r);
                    for c in 0..cols {
                        row[c] = inv_std[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
                    }
                }
                acc(*x, dx)?;
                acc(*gamma, dgamma)?;
                acc(*beta, dbeta)?;
            }
            Op::Attention {
                q,
                k,
                v,
                group,
                heads,
                probs,
            } => {
                let (qm, km, vm) = (val(*q), val(*k), val(*v));
                let (n, d) = (*group, qm.cols);
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut dq = Mat::zeros(qm.rows, d);
                let mut dk = Mat::zeros(qm.rows, d);
                let mut dv = Mat::zeros(qm.rows, d);
                let mut dp = vec![0.0; n * n];
                let mut ds = vec![0.0; n * n];
                for g in 0..qm.rows / n {
                    let base = g * n;
                    for h in 0..*heads {
                        let off = h * dh;
                        let p = &probs[(g * heads + h) * n * n..(g * heads + h + 1) * n * n];
                        for i in 0..n {
                            let gi = &gy.row(base + i)[off..off + dh];
                            for j in 0..n {
                                dp[i * n + j] = dot(gi, &vm.row(base + j)[off..off + dh]);
                                let dvj = &mut dv.data[(base + j) * d + off..(base + j) * d + off + dh];
                                dvj.iter_mut().zip(gi).for_each(|(o, &x)| *o += p[i * n + j] * x);
                            }
                            let row_dot: f64 = (0..n).map(|j| dp[i * n + j] * p[i * n + j]).sum();
                            for j in 0..n {
                                ds[i * n + j] = p[i * n + j] * (dp[i * n + j] - row_dot) * scale;
                            }
                        }
                        for i in 0..n {
                            for j in 0..n {
                                let s = ds[i * n + j];
                                if s == 0.0 {
                                    continue;
                                }
                                let kj = &km.data[(base + j) * d + off..(base + j) * d + off + dh];
                                let dqi = &mut dq.data[(base + i) * d + off..(base + i) * d + off + dh];
                                dqi.iter_mut().zip(kj).for_each(|(o, &x)| *o += s * x);
                                let qi = &qm.data[(base + i) * d + off..(base + i) * d + off + dh];
                                let dkj = &mut dk.data[(base + j) * d + off..(base + j) * d + off + dh];
                                dkj.iter_mut().zip(qi).for_each(|(o, &x)| *o += s * x);
                            }
                        }
                    }
                }
                acc(*q, dq)?;
                acc(*k, dk)?;
                acc(*v, dv)?;
            }
            Op::GroupMean(x, group) => {
                let xv = val(*x);
                let mut dx = Mat::zeros(xv.rows, xv.cols);
                for r in 0..xv.rows {
                    dx.row_mut(r)
                        .iter_mut()
                        .zip(gy.row(r / group))
                        .for_each(|(o, &g)| *o = g / *group as f64);
                }
                acc(*x, dx)?;
            }
            Op::Interleave(inputs) => {
                let n = inputs.len();
                for (i, &v) in inputs.iter().enumerate() {
                    let m = val(v);
                    let mut g = Mat::zeros(m.rows, m.cols);
                    for p in 0..m.rows {
                        g.row_mut(p).copy_from_slice(gy.row(p * n + i));
                    }
                    acc(v, g)?;
                }
            }
            Op::ConcatCols(a, b) => {
                let (ac, bc) = (val(*a).cols, val(*b).cols);
                let mut ga = Mat::zeros(gy.rows, ac);
                let mut gb = Mat::zeros(gy.rows, bc);
                for r in 0..gy.rows {
                    ga.row_mut(r).copy_from_slice(&gy.row(r)[..ac]);
                    gb.row_mut(r).copy_from_slice(&gy.row(r)[ac..]);
                }
                acc(*a, ga)?;
                acc(*b, gb)?;
            }
        }
        Ok(())
    }
}

/// Result of a backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
    params: BTreeMap<String, Var>,
    visited: usize,
}

impl Gradients {
    /// Gradient of any node; `None` if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for a named parameter, zeros when it did not influence the
    /// loss or was never placed on the tape.
    pub fn param(&self, name: &str, like: &Mat) -> Mat {
        self.params
            .get(name)
            .and_then(|&v| self.wrt(v))
            .cloned()
            .unwrap_or_else(|| Mat::zeros(like.rows, like.cols))
    }

    /// Gradients for every parameter of `store`, in the store's order.
    pub fn for_store(&self, store: &ParamStore) -> ParamStore {
        let mut out = ParamStore::new();
        for (name, m) in store.iter() {
            out.insert(name.clone(), self.param(name, m));
        }
        out
    }

    /// Nodes the reverse sweep stepped through.
    pub fn visited(&self) -> usize {
        self.visited
    }
}
