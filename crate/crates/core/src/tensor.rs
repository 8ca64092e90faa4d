//! Dense row-major tensors with a small closed set of element types.
//!
//! Channels are innermost: for an `H×W×C` tensor the element `(i, j, c)`
//! lives at flat index `((i * W) + j) * C + c`, so a pixel's channel vector
//! is contiguous.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
    U8,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
            DType::U8 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            2 => Some(DType::U8),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
            DType::U8 => "u8",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Data {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl Data {
    pub fn len(&self) -> usize {
        match self {
            Data::F32(v) => v.len(),
            Data::F64(v) => v.len(),
            Data::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            Data::F32(_) => DType::F32,
            Data::F64(_) => DType::F64,
            Data::U8(_) => DType::U8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Data,
}

fn check_dims(dims: &[usize], len: usize) -> Result<()> {
    if dims.is_empty() {
        return Err(Error::InvalidTensor("rank must be at least 1".into()));
    }
    if dims.len() > u8::MAX as usize {
        return Err(Error::InvalidTensor(format!("rank {} exceeds 255", dims.len())));
    }
    if let Some(pos) = dims.iter().position(|&d| d == 0) {
        return Err(Error::InvalidTensor(format!("dim {pos} is zero")));
    }
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidTensor(format!("dims {dims:?} overflow")))?;
    if expected != len {
        return Err(Error::InvalidTensor(format!(
            "dims {dims:?} require {expected} elements, data has {len}"
        )));
    }
    Ok(())
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Data) -> Result<Self> {
        check_dims(&dims, data.len())?;
        Ok(Self { dims, data })
    }

    pub fn from_f64(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(dims, Data::F64(data))
    }

    pub fn from_f32(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(dims, Data::F32(data))
    }

    pub fn from_u8(dims: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        Self::new(dims, Data::U8(data))
    }

    pub fn zeros(dims: Vec<usize>, dtype: DType) -> Result<Self> {
        let n = dims.iter().product();
        let data = match dtype {
            DType::F32 => Data::F32(vec![0.0; n]),
            DType::F64 => Data::F64(vec![0.0; n]),
            DType::U8 => Data::U8(vec![0; n]),
        };
        Self::new(dims, data)
    }

    pub fn filled_f64(dims: Vec<usize>, value: f64) -> Result<Self> {
        let n = dims.iter().product();
        Self::from_f64(dims, vec![value; n])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &Data {
        &self.data
    }

    pub fn into_data(self) -> Data {
        self.data
    }

    fn mismatch(&self, expected: DType) -> Error {
        Error::DtypeMismatch {
            expected: expected.name(),
            found: self.dtype().name(),
        }
    }

    pub fn as_f64(&self) -> Result<&[f64]> {
        match &self.data {
            Data::F64(v) => Ok(v),
            _ => Err(self.mismatch(DType::F64)),
        }
    }

    pub fn as_f64_mut(&mut self) -> Result<&mut [f64]> {
        let found = self.data.dtype().name();
        match &mut self.data {
            Data::F64(v) => Ok(v),
            _ => Err(Error::DtypeMismatch {
                expected: "f64",
                found,
            }),
        }
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.data {
            Data::F32(v) => Ok(v),
            _ => Err(self.mismatch(DType::F32)),
        }
    }

    pub fn as_f32_mut(&mut self) -> Result<&mut [f32]> {
        let found = self.data.dtype().name();
        match &mut self.data {
            Data::F32(v) => Ok(v),
            _ => Err(Error::DtypeMismatch {
                expected: "f32",
                found,
            }),
        }
    }

    pub fn as_u8(&self) -> Result<&[u8]> {
        match &self.data {
            Data::U8(v) => Ok(v),
            _ => Err(self.mismatch(DType::U8)),
        }
    }

    pub fn as_u8_mut(&mut self) -> Result<&mut [u8]> {
        let found = self.data.dtype().name();
        match &mut self.data {
            Data::U8(v) => Ok(v),
            _ => Err(Error::DtypeMismatch {
                expected: "u8",
                found,
            }),
        }
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.dims.len() {
            return Err(Error::Shape(format!(
                "index of rank {} into tensor of rank {}",
                index.len(),
                self.dims.len()
            )));
        }
        let mut flat = 0;
        for (axis, (&i, &d)) in index.iter().zip(&self.dims).enumerate() {
            if i >= d {
                return Err(Error::Shape(format!("index {i} out of bounds for axis {axis} of size {d}")));
            }
            flat = flat * d + i;
        }
        Ok(flat)
    }

    /// Element as `f64` regardless of storage type.
    pub fn get(&self, index: &[usize]) -> Result<f64> {
        let k = self.offset(index)?;
        Ok(match &self.data {
            Data::F32(v) => v[k] as f64,
            Data::F64(v) => v[k],
            Data::U8(v) => v[k] as f64,
        })
    }

    pub fn reshape(self, dims: Vec<usize>) -> Result<Self> {
        Self::new(dims, self.data)
    }

    /// Explicit conversion; float to u8 rounds and saturates.
    pub fn cast(&self, dtype: DType) -> Tensor {
        let data = match (&self.data, dtype) {
            (Data::F32(v), DType::F32) => Data::F32(v.clone()),
            (Data::F32(v), DType::F64) => Data::F64(v.iter().map(|&x| x as f64).collect()),
            (Data::F32(v), DType::U8) => Data::U8(v.iter().map(|&x| x.round() as u8).collect()),
            (Data::F64(v), DType::F32) => Data::F32(v.iter().map(|&x| x as f32).collect()),
            (Data::F64(v), DType::F64) => Data::F64(v.clone()),
            (Data::F64(v), DType::U8) => Data::U8(v.iter().map(|&x| x.round() as u8).collect()),
            (Data::U8(v), DType::F32) => Data::F32(v.iter().map(|&x| x as f32).collect()),
            (Data::U8(v), DType::F64) => Data::F64(v.iter().map(|&x| x as f64).collect()),
            (Data::U8(v), DType::U8) => Data::U8(v.clone()),
        };
        Tensor {
            dims: self.dims.clone(),
            data,
        }
    }

    /// Values widened to `f64`.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            Data::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Data::F64(v) => v.clone(),
            Data::U8(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        match &self.data {
            Data::F32(v) => v.iter().all(|x| x.is_finite()),
            Data::F64(v) => v.iter().all(|x| x.is_finite()),
            Data::U8(_) => true,
        }
    }

    /// Bitwise equality: dims, dtype and every payload bit.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        if self.dims != other.dims {
            return false;
        }
        match (&self.data, &other.data) {
            (Data::F32(a), Data::F32(b)) => a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()),
            (Data::F64(a), Data::F64(b)) => a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()),
            (Data::U8(a), Data::U8(b)) => a == b,
            _ => false,
        }
    }

    fn zip_with(
        &self,
        other: &Tensor,
        f32_op: impl Fn(f32, f32) -> f32,
        f64_op: impl Fn(f64, f64) -> f64,
        u8_op: impl Fn(u8, u8) -> u8,
    ) -> Result<Tensor> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        let data = match (&self.data, &other.data) {
            (Data::F32(a), Data::F32(b)) => Data::F32(a.iter().zip(b).map(|(&x, &y)| f32_op(x, y)).collect()),
            (Data::F64(a), Data::F64(b)) => Data::F64(a.iter().zip(b).map(|(&x, &y)| f64_op(x, y)).collect()),
            (Data::U8(a), Data::U8(b)) => Data::U8(a.iter().zip(b).map(|(&x, &y)| u8_op(x, y)).collect()),
            _ => return Err(other.mismatch(self.dtype())),
        };
        Ok(Tensor {
            dims: self.dims.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b, |a, b| a + b, u8::wrapping_add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a - b, |a, b| a - b, u8::wrapping_sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a * b, |a, b| a * b, u8::wrapping_mul)
    }
}
