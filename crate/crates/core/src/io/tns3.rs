//! `TNS3` layout, all little-endian:
//!
//! ```text
//! offset  size       field
//! 0       4          magic "TNS3"
//! 4       4          version, u32 = 1
//! 8       8 * 3      n1, n2, n3 as u64
//! 32      8 * n      f64 payload, row-major with the third index fastest
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

pub const TNS3_MAGIC: &[u8; 4] = b"TNS3";
pub const TNS3_VERSION: u32 = 1;
const HEADER_LEN: usize = 32;

pub fn encode_tns3(t: &Tensor3) -> Vec<u8> {
    let (n1, n2, n3) = t.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * t.len());
    out.extend_from_slice(TNS3_MAGIC);
    out.extend_from_slice(&TNS3_VERSION.to_le_bytes());
    for n in [n1, n2, n3] {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tns3(bytes: &[u8]) -> Result<Tensor3> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "truncated header: {} bytes",
            bytes.len()
        )));
    }
    if &bytes[..4] != TNS3_MAGIC {
        return Err(Error::Format("bad magic, expected TNS3".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != TNS3_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dim = |i: usize| {
        let raw = u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().expect("8 bytes"));
        usize::try_from(raw).map_err(|_| Error::Format(format!("dimension {raw} too large")))
    };
    let dims = (dim(0)?, dim(1)?, dim(2)?);
    if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
        return Err(Error::Format(format!("zero dimension in {dims:?}")));
    }
    let count = dims
        .0
        .checked_mul(dims.1)
        .and_then(|v| v.checked_mul(dims.2))
        .ok_or_else(|| Error::Format(format!("dimensions {dims:?} overflow")))?;
    let payload = &bytes[HEADER_LEN..];
    if Some(payload.len()) != count.checked_mul(8) {
        return Err(Error::Format(format!(
            "payload has {} bytes, dims {dims:?} need {count} f64 values",
            payload.len()
        )));
    }
    let mut data = Vec::with_capacity(count);
    for (i, chunk) in payload.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        if !v.is_finite() {
            return Err(Error::Format(format!("non-finite value at entry {i}")));
        }
        data.push(v);
    }
    Tensor3::from_vec(dims, data)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor3> {
    decode_tns3(&fs::read(path)?)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor3) -> Result<()> {
    fs::write(path, encode_tns3(t))?;
    Ok(())
}

/// Reads a `TNS3` file whose entries must all be 0 or 1.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Tensor3> {
    let m = read_tensor(path)?;
    super::validate_mask(&m)?;
    Ok(m)
}
