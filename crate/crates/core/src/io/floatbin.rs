//! A text line of dimensions followed by little-endian `f32` values.

use std::path::Path;

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn encode(dims: &[usize], values: &[f32]) -> Vec<u8> {
    let header = dims
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(" ");
    let mut out = Vec::with_capacity(header.len() + 1 + 4 * values.len());
    out.extend_from_slice(header.as_bytes());
    out.push(b'\n');
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode(bytes: &[u8], rank: usize, what: &str) -> Result<(Vec<usize>, Vec<f32>)> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Decode(format!("{what}: missing header line")))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::Decode(format!("{what}: header is not text")))?;
    let dims = header
        .split_whitespace()
        .map(|t| t.parse::<usize>().ok().filter(|&d| d > 0))
        .collect::<Option<Vec<_>>>()
        .filter(|d| d.len() == rank)
        .ok_or_else(|| {
            Error::Decode(format!(
                "{what}: header {header:?} is not {rank} positive sizes"
            ))
        })?;
    let n: usize = dims.iter().product();
    let data = &bytes[nl + 1..];
    if data.len() != 4 * n {
        return Err(Error::Decode(format!(
            "{what}: header {header:?} needs {} payload bytes, found {}",
            4 * n,
            data.len()
        )));
    }
    let values = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((dims, values))
}

/// Float map with header `"H W"`. Infinite values survive; NaN does not.
pub fn encode_map(height: usize, width: usize, values: &[f32]) -> Result<Vec<u8>> {
    if values.len() != height * width {
        return Err(Error::shape(format!(
            "{} values for a {height}x{width} map",
            values.len()
        )));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("map values".into()));
    }
    Ok(encode(&[height, width], values))
}

pub fn decode_map(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    let (dims, values) = decode(bytes, 2, "float map")?;
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Decode("float map contains NaN".into()));
    }
    Ok((dims[0], dims[1], values))
}

pub fn save_map(path: &Path, height: usize, width: usize, values: &[f32]) -> Result<()> {
    write_atomic(path, &encode_map(height, width, values)?)
}

pub fn load_map(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    decode_map(&read_bytes(path)?).map_err(|e| Error::Decode(format!("{}: {e}", path.display())))
}

/// Detection head tensor `[C,S,S]` with header `"C S S"`.
pub fn encode_head(head: &Tensor<f32>) -> Result<Vec<u8>> {
    let (c, h, w) = head.dims3()?;
    if h != w {
        return Err(Error::shape(format!(
            "head grid must be square, got {h}x{w}"
        )));
    }
    Ok(encode(&[c, h, w], head.data()))
}

pub fn decode_head(bytes: &[u8]) -> Result<Tensor<f32>> {
    let (dims, values) = decode(bytes, 3, "head file")?;
    if dims[1] != dims[2] {
        return Err(Error::Decode(format!(
            "head grid must be square, got {}x{}",
            dims[1], dims[2]
        )));
    }
    Tensor::from_vec(&dims, values)
}

pub fn save_head(path: &Path, head: &Tensor<f32>) -> Result<()> {
    write_atomic(path, &encode_head(head)?)
}

pub fn load_head(path: &Path) -> Result<Tensor<f32>> {
    decode_head(&read_bytes(path)?).map_err(|e| match e {
        Error::Decode(m) => Error::Decode(format!("{}: {m}", path.display())),
        other => other,
    })
}
