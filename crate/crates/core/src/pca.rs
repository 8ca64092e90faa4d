//! Three-channel PCA projection of a concept tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::ConceptTensor;
use crate::mat::{dot, Mat};
use crate::tensor::Tensor;
use crate::tlt;

const JACOBI_REL_TOL: f64 = 1e-10;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric matrix: eigenvalues descending, with
/// matching unit eigenvectors as the rows of `vectors`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Mat,
}

fn off_diagonal_norm(a: &Mat) -> f64 {
    let n = a.rows;
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a.at(i, j) * a.at(i, j);
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi rotation until the off-diagonal Frobenius norm falls to
/// `1e-10 · |trace|` (or zero).
pub fn jacobi_eigen(sym: &Mat) -> Result<SymmetricEigen> {
    let n = sym.rows;
    if sym.cols != n {
        return Err(Error::Shape(format!("Jacobi needs a square matrix, got {}×{}", sym.rows, sym.cols)));
    }
    let mut a = sym.clone();
    let mut v = Mat::identity(n);
    let trace: f64 = (0..n).map(|i| a.at(i, i)).sum();
    let stop = JACOBI_REL_TOL * trace.abs();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off = off_diagonal_norm(&a);
        if off <= stop || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.at(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.at(k, p);
                    let akq = a.at(k, q);
                    a.data[k * n + p] = c * akp - s * akq;
                    a.data[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a.at(p, k);
                    let aqk = a.at(q, k);
                    a.data[p * n + k] = c * apk - s * aqk;
                    a.data[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    v.data[k * n + p] = c * vkp - s * vkq;
                    v.data[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.at(j, j).total_cmp(&a.at(i, i)).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a.at(i, i)).collect();
    let mut vectors = Mat::zeros(n, n);
    for (r, &i) in order.iter().enumerate() {
        for k in 0..n {
            vectors.data[r * n + k] = v.at(k, i);
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

/// Flips `v` so its largest-magnitude entry (first on ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// 3×d, orthonormal rows.
    pub components: Mat,
    /// Variance along each of the three components.
    pub explained: Vec<f64>,
    /// Every eigenvalue of the covariance, descending; sums to its trace.
    pub spectrum: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BasisMeta {
    width: usize,
    explained: Vec<f64>,
    spectrum: Vec<f64>,
}

impl PcaBasis {
    pub fn width(&self) -> usize {
        self.mean.len()
    }

    /// Writes `mean.tlt`, `components.tlt` and `basis.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|source| Error::Path {
            path: dir.display().to_string(),
            source,
        })?;
        tlt::save(&Tensor::from_f64(vec![self.width()], self.mean.clone())?, dir.join("mean.tlt"))?;
        tlt::save(&self.components.to_tensor(), dir.join("components.tlt"))?;
        let meta = BasisMeta {
            width: self.width(),
            explained: self.explained.clone(),
            spectrum: self.spectrum.clone(),
        };
        let path = dir.join("basis.json");
        fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|source| Error::Path {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("basis.json");
        let text = fs::read_to_string(&path).map_err(|source| Error::Path {
            path: path.display().to_string(),
            source,
        })?;
        let meta: BasisMeta = serde_json::from_str(&text)?;
        let mean = tlt::load(dir.join("mean.tlt"))?.to_f64_vec();
        let components = Mat::from_tensor(&tlt::load(dir.join("components.tlt"))?)?;
        if mean.len() != meta.width || (components.rows, components.cols) != (3, meta.width) {
            return Err(Error::Shape("PCA basis files disagree on width".into()));
        }
        Ok(Self {
            mean,
            components,
            explained: meta.explained,
            spectrum: meta.spectrum,
        })
    }

    /// Centered coordinates of each pixel along the three components.
    pub fn project(&self, z: &ConceptTensor) -> Result<Mat> {
        if z.channels() != self.width() {
            return Err(Error::Shape(format!("basis width {} vs concept width {}", self.width(), z.channels())));
        }
        let mut out = Mat::zeros(z.pixels(), 3);
        let mut centered = vec![0.0; self.width()];
        for p in 0..z.pixels() {
            for (c, (x, m)) in centered.iter_mut().zip(z.pixel(p).iter().zip(&self.mean)) {
                *c = x - m;
            }
            for k in 0..3 {
                out.data[p * 3 + k] = dot(&centered, self.components.row(k));
            }
        }
        Ok(out)
    }
}

/// Fits the basis over all pixels (covariance divided by `HW − 1`).
pub fn fit_pca(z: &ConceptTensor) -> Result<PcaBasis> {
    let d = z.channels();
    let n = z.pixels();
    if d < 3 {
        return Err(Error::Contract(format!("PCA to 3 channels needs width ≥ 3, got {d}")));
    }
    if n < 4 {
        return Err(Error::Contract(format!("PCA needs at least 4 pixels, got {n}")));
    }
    let mut mean = vec![0.0; d];
    for p in 0..n {
        mean.iter_mut().zip(z.pixel(p)).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = Mat::zeros(d, d);
    let mut centered = vec![0.0; d];
    for p in 0..n {
        for (c, (x, m)) in centered.iter_mut().zip(z.pixel(p).iter().zip(&mean)) {
            *c = x - m;
        }
        for i in 0..d {
            for j in i..d {
                cov.data[i * d + j] += centered[i] * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov.data[i * d + j] / (n - 1) as f64;
            cov.data[i * d + j] = v;
            cov.data[j * d + i] = v;
        }
    }

    let eig = jacobi_eigen(&cov)?;
    let mut components = Mat::zeros(3, d);
    for k in 0..3 {
        let row = components.row_mut(k);
        row.copy_from_slice(eig.vectors.row(k));
        fix_sign(row);
    }
    Ok(PcaBasis {
        mean,
        components,
        explained: eig.values[..3].to_vec(),
        spectrum: eig.values,
    })
}

/// Columns whose range is below this fraction of the widest column's range
/// are rounding noise and count as constant.
const FLAT_COLUMN_REL: f64 = 1e-9;

/// Rescales each column to `[0, 1]`; constant columns become 0.5.
pub fn rescale_columns(coords: &Mat) -> Mat {
    let mut out = coords.clone();
    let ranges: Vec<(f64, f64)> = (0..coords.cols)
        .map(|c| {
            (0..coords.rows).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                let v = coords.at(r, c);
                (lo.min(v), hi.max(v))
            })
        })
        .collect();
    let widest = ranges.iter().fold(0f64, |m, (lo, hi)| m.max(hi - lo));
    for (c, &(lo, hi)) in ranges.iter().enumerate() {
        let span = hi - lo;
        for r in 0..coords.rows {
            out.data[r * coords.cols + c] = if span > FLAT_COLUMN_REL * widest && span > 0.0 {
                (coords.at(r, c) - lo) / span
            } else {
                0.5
            };
        }
    }
    out
}

/// Fits the basis and returns it with the rescaled `H×W×3` image.
pub fn pca_project_3(z: &ConceptTensor) -> Result<(PcaBasis, Tensor)> {
    let basis = fit_pca(z)?;
    let coords = basis.project(z)?;
    let img = rescale_columns(&coords);
    let t = Tensor::from_f64(vec![z.height(), z.width(), 3], img.data)?;
    Ok((basis, t))
}
