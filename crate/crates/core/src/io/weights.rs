//! Weights file: a text manifest, then the raw payload.
//!
//! ```text
//! vision-weights v1 <count>
//! <name> <d0>x<d1>x... <byte offset>
//! ...
//! <little-endian f32 payload>
//! ```
//!
//! Offsets are relative to the start of the payload and must be contiguous
//! in manifest order.

use std::collections::HashSet;
use std::path::Path;

use super::{read_bytes, write_atomic};
use crate::depth::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &str = "vision-weights v1";

fn integrity(msg: impl Into<String>) -> Error {
    Error::Integrity(msg.into())
}

pub fn encode_weights<'a, I>(entries: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = (&'a str, &'a Tensor<f32>)>,
{
    let entries: Vec<_> = entries.into_iter().collect();
    let mut seen = HashSet::new();
    let mut manifest = format!("{MAGIC} {}\n", entries.len());
    let mut payload = Vec::new();
    for (name, t) in &entries {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::invalid(format!(
                "parameter name {name:?} must be non-empty without spaces"
            )));
        }
        if !seen.insert(*name) {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        let dims = t
            .shape()
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join("x");
        manifest.push_str(&format!("{name} {dims} {}\n", payload.len()));
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = manifest.into_bytes();
    out.extend_from_slice(&payload);
    Ok(out)
}

fn take_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| integrity("manifest ends before its declared entries"))?;
    *pos += nl + 1;
    std::str::from_utf8(&rest[..nl]).map_err(|_| integrity("manifest is not UTF-8"))
}

/// Entries in manifest order.
pub fn decode_weights(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut pos = 0;
    let header = take_line(bytes, &mut pos)?;
    let count: usize = header
        .strip_prefix(MAGIC)
        .and_then(|r| r.trim().parse().ok())
        .ok_or_else(|| integrity(format!("bad weights header {header:?}")))?;

    let mut manifest = Vec::with_capacity(count);
    let mut expected_offset = 0usize;
    let mut seen = HashSet::new();
    for i in 0..count {
        let line = take_line(bytes, &mut pos)?;
        let parts: Vec<&str> = line.split(' ').collect();
        let [name, dims, offset] = parts[..] else {
            return Err(integrity(format!(
                "manifest line {} malformed: {line:?}",
                i + 1
            )));
        };
        let shape = dims
            .split('x')
            .map(|d| d.parse::<usize>().ok().filter(|&d| d > 0))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| integrity(format!("bad dims {dims:?} for {name}")))?;
        let offset: usize = offset
            .parse()
            .map_err(|_| integrity(format!("bad offset {offset:?} for {name}")))?;
        if offset != expected_offset {
            return Err(integrity(format!(
                "{name} starts at byte {offset}, expected {expected_offset}"
            )));
        }
        if !seen.insert(name.to_string()) {
            return Err(integrity(format!("duplicate parameter {name}")));
        }
        expected_offset += 4 * shape.iter().product::<usize>();
        manifest.push((name.to_string(), shape, offset));
    }
    let payload = &bytes[pos..];
    if payload.len() != expected_offset {
        return Err(integrity(format!(
            "payload has {} bytes, manifest declares {expected_offset}",
            payload.len()
        )));
    }
    manifest
        .into_iter()
        .map(|(name, shape, offset)| {
            let n: usize = shape.iter().product();
            let data = payload[offset..offset + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t =
                Tensor::from_vec(&shape, data).map_err(|e| integrity(format!("{name}: {e}")))?;
            Ok((name, t))
        })
        .collect()
}

pub fn save_weights(path: &Path, entries: &[(String, Tensor<f32>)]) -> Result<()> {
    write_atomic(
        path,
        &encode_weights(entries.iter().map(|(n, t)| (n.as_str(), t)))?,
    )
}

pub fn load_weights(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    decode_weights(&read_bytes(path)?).map_err(|e| match e {
        Error::Integrity(m) => Error::Integrity(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn save_params(path: &Path, params: &ParamSet<f32>) -> Result<()> {
    write_atomic(path, &encode_weights(params.iter())?)
}

/// Loads a file into an existing parameter set; every name must match.
pub fn load_params(path: &Path, params: &mut ParamSet<f32>) -> Result<()> {
    params.load_named(load_weights(path)?)
}
