//! Row-major `f64` matrices, the working type for tokens and parameters.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("{rows}×{cols} matrix from {} values", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// A single row vector.
    pub fn row_vector(v: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: v.len(),
            data: v,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    /// Glorot-uniform initialization, `U(±√(6/(fan_in+fan_out)))`.
    pub fn xavier(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.uniform_range(-bound, bound)).collect();
        Self { rows, cols, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self · rhs`.
    pub fn matmul(&self, rhs: &Mat) -> Result<Mat> {
        if self.cols != rhs.rows {
            return Err(Error::Shape(format!(
                "matmul {}×{} by {}×{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &aik) in a.iter().enumerate() {
                let b = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (oj, &bkj) in o.iter_mut().zip(b) {
                    *oj += aik * bkj;
                }
            }
        }
        Ok(out)
    }

    /// `self · rhsᵀ`.
    pub fn matmul_t(&self, rhs: &Mat) -> Result<Mat> {
        if self.cols != rhs.cols {
            return Err(Error::Shape(format!(
                "matmul_t {}×{} by ({}×{})ᵀ",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..rhs.rows {
                out.data[i * rhs.rows + j] = dot(a, rhs.row(j));
            }
        }
        Ok(out)
    }

    /// `selfᵀ · rhs`.
    pub fn t_matmul(&self, rhs: &Mat) -> Result<Mat> {
        if self.rows != rhs.rows {
            return Err(Error::Shape(format!(
                "t_matmul ({}×{})ᵀ by {}×{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Mat::zeros(self.cols, rhs.cols);
        for r in 0..self.rows {
            let a = self.row(r);
            let b = rhs.row(r);
            for (i, &ai) in a.iter().enumerate() {
                let o = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (oj, &bj) in o.iter_mut().zip(b) {
                    *oj += ai * bj;
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, rhs: &Mat) -> Result<Mat> {
        self.same_shape(rhs)?;
        Ok(Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn add_assign(&mut self, rhs: &Mat) -> Result<()> {
        self.same_shape(rhs)?;
        self.data.iter_mut().zip(&rhs.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// Adds a `1×cols` row vector to every row.
    pub fn add_row(&self, bias: &Mat) -> Result<Mat> {
        if bias.len() != self.cols {
            return Err(Error::Shape(format!("bias of {} for {} columns", bias.len(), self.cols)));
        }
        let mut out = self.clone();
        for i in 0..out.rows {
            out.row_mut(i).iter_mut().zip(&bias.data).for_each(|(a, b)| *a += b);
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn same_shape(&self, rhs: &Mat) -> Result<()> {
        if (self.rows, self.cols) != (rhs.rows, rhs.cols) {
            return Err(Error::Shape(format!(
                "{}×{} vs {}×{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_f64(vec![self.rows, self.cols], self.data.clone()).expect("consistent dims")
    }

    /// Accepts rank-1 tensors as row vectors and rank-2 as matrices.
    pub fn from_tensor(t: &Tensor) -> Result<Mat> {
        let data = t.to_f64_vec();
        match *t.dims() {
            [n] => Mat::new(1, n, data),
            [r, c] => Mat::new(r, c, data),
            _ => Err(Error::Shape(format!("expected rank 1 or 2, got {:?}", t.dims()))),
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
