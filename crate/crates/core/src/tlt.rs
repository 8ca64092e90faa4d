//! TLT1 binary tensor files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "TLT1" | rank: u8 | dims: rank × u32 | dtype: u8 (0=f32, 1=f64, 2=u8) | payload
//! ```
//!
//! The payload is the row-major element buffer with no padding.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Data, Tensor};

pub const MAGIC: &[u8; 4] = b"TLT1";

struct Sink<W> {
    inner: W,
    written: u64,
}

impl<W: Write> Sink<W> {
    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.inner.write_all(bytes).map_err(|source| Error::Io {
            offset: self.written,
            source,
        })?;
        self.written += bytes.len() as u64;
        Ok(())
    }
}

/// Serializes `t`, returning the number of bytes written.
pub fn write_tensor<W: Write>(t: &Tensor, dest: W) -> Result<u64> {
    let mut sink = Sink { inner: dest, written: 0 };
    sink.put(MAGIC)?;
    sink.put(&[t.rank() as u8])?;
    for &d in t.dims() {
        let d = u32::try_from(d).map_err(|_| Error::InvalidTensor(format!("dim {d} exceeds u32")))?;
        sink.put(&d.to_le_bytes())?;
    }
    sink.put(&[t.dtype().tag()])?;
    match t.data() {
        Data::F32(v) => {
            let mut buf = Vec::with_capacity(v.len() * 4);
            v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes()));
            sink.put(&buf)?;
        }
        Data::F64(v) => {
            let mut buf = Vec::with_capacity(v.len() * 8);
            v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes()));
            sink.put(&buf)?;
        }
        Data::U8(v) => sink.put(v)?,
    }
    sink.inner.flush().map_err(|source| Error::Io {
        offset: sink.written,
        source,
    })?;
    Ok(sink.written)
}

fn read_exact_field<R: Read>(src: &mut R, buf: &mut [u8], field: &'static str) -> Result<()> {
    src.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => Error::Format {
            field,
            detail: "truncated".into(),
        },
        _ => Error::Io { offset: 0, source: e },
    })
}

pub fn read_tensor<R: Read>(mut src: R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    read_exact_field(&mut src, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format {
            field: "magic",
            detail: format!("expected \"TLT1\", found {magic:02x?}"),
        });
    }
    let mut rank = [0u8; 1];
    read_exact_field(&mut src, &mut rank, "rank")?;
    if rank[0] == 0 {
        return Err(Error::Format {
            field: "rank",
            detail: "rank must be at least 1".into(),
        });
    }
    let mut dims = Vec::with_capacity(rank[0] as usize);
    for _ in 0..rank[0] {
        let mut b = [0u8; 4];
        read_exact_field(&mut src, &mut b, "dims")?;
        let d = u32::from_le_bytes(b) as usize;
        if d == 0 {
            return Err(Error::Format {
                field: "dims",
                detail: "zero-length dimension".into(),
            });
        }
        dims.push(d);
    }
    let mut tag = [0u8; 1];
    read_exact_field(&mut src, &mut tag, "dtype")?;
    let dtype = DType::from_tag(tag[0]).ok_or_else(|| Error::Format {
        field: "dtype",
        detail: format!("unknown dtype tag {}", tag[0]),
    })?;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format {
            field: "dims",
            detail: format!("{dims:?} overflows"),
        })?;
    let nbytes = count.checked_mul(dtype.size()).ok_or_else(|| Error::Format {
        field: "dims",
        detail: format!("{dims:?} overflows"),
    })?;
    // Read incrementally so a lying header cannot force a huge allocation.
    let mut payload = Vec::new();
    let got = src
        .by_ref()
        .take(nbytes as u64)
        .read_to_end(&mut payload)
        .map_err(|source| Error::Io { offset: 0, source })?;
    if got < nbytes {
        return Err(Error::Format {
            field: "payload",
            detail: format!("expected {nbytes} bytes ({count} elements), found {got}"),
        });
    }
    let data = match dtype {
        DType::F32 => Data::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        DType::F64 => Data::F64(
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        DType::U8 => Data::U8(payload),
    };
    Tensor::new(dims, data)
}

pub fn save(t: &Tensor, path: impl AsRef<Path>) -> Result<u64> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| Error::Path {
        path: path.display().to_string(),
        source,
    })?;
    write_tensor(t, BufWriter::new(file))
}

pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Path {
        path: path.display().to_string(),
        source,
    })?;
    read_tensor(BufReader::new(file))
}
