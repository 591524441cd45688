//! `SVC1` raw clip files: the magic bytes, `u32` little-endian `N`, `H`, `W`,
//! then `N * H * W * 3` little-endian `f32` values in (frame, row, column,
//! channel) order.

use std::fs;
use std::path::Path;

use semcom_tensor::Tensor;

use super::DataError;

pub const SVC1_MAGIC: &[u8; 4] = b"SVC1";
const HEADER: usize = 16;

pub fn write_svc1(path: &Path, frames: &Tensor<f32>) -> Result<(), DataError> {
    let s = frames.shape();
    if s.len() != 4 || s[3] != 3 {
        return Err(DataError::InvalidClip(format!("expected [n, h, w, 3], got {s:?}")));
    }
    let mut buf = Vec::with_capacity(HEADER + 4 * frames.len());
    buf.extend_from_slice(SVC1_MAGIC);
    for &d in &s[..3] {
        let d = u32::try_from(d).map_err(|_| DataError::InvalidClip(format!("dimension {d} exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for v in frames.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_svc1(path: &Path) -> Result<Tensor<f32>, DataError> {
    if !path.exists() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    let buf = fs::read(path)?;
    if buf.len() < HEADER || &buf[..4] != SVC1_MAGIC {
        return Err(DataError::Format("missing SVC1 header".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(buf[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (n, h, w) = (dim(0), dim(1), dim(2));
    let count = n
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(3))
        .ok_or_else(|| DataError::Format("dimensions overflow".into()))?;
    if buf.len() - HEADER != 4 * count {
        return Err(DataError::Format(format!(
            "expected {} payload bytes for {n}x{h}x{w}x3, found {}",
            4 * count,
            buf.len() - HEADER
        )));
    }
    let data = buf[HEADER..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Tensor::from_vec(&[n, h, w, 3], data))
}
