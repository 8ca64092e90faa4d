//! Binary PPM (P6) output.

use std::io::Write;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Channel value to byte: `round(clamp(v, 0, 1) · 255)`, halves rounding up.
pub fn to_byte(v: f64) -> u8 {
    let c = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (c * 255.0 + 0.5).floor() as u8
}

/// Writes an `H×W×3` image as P6; returns the byte count.
pub fn write_ppm<W: Write>(img: &Tensor, mut dest: W) -> Result<u64> {
    let (h, w) = match *img.dims() {
        [h, w, 3] => (h, w),
        _ => return Err(Error::Shape(format!("expected H×W×3, got {:?}", img.dims()))),
    };
    let header = format!("P6\n{w} {h}\n255\n");
    let mut bytes = header.into_bytes();
    bytes.extend(img.to_f64_vec().into_iter().map(to_byte));
    dest.write_all(&bytes).map_err(|source| Error::Io { offset: 0, source })?;
    dest.flush().map_err(|source| Error::Io {
        offset: bytes.len() as u64,
        source,
    })?;
    Ok(bytes.len() as u64)
}
