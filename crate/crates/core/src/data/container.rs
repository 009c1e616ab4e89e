//! WCTF1: a minimal named-tensor container.
//!
//! ```text
//! "WCTF1" | manifest length (u64 LE) | manifest JSON | payload
//! ```
//!
//! The manifest maps each tensor name to `{"dtype": "f32", "shape": [...],
//! "offset": n}`, where `offset` counts bytes from the start of the payload.
//! Values are little-endian and row-major.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"WCTF1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Contract(format!(
                "tensor of shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
}

pub fn write_container_bytes<'a>(tensors: impl IntoIterator<Item = (&'a str, &'a NamedTensor)>) -> Result<Vec<u8>> {
    let mut manifest = BTreeMap::new();
    let mut payload = Vec::new();
    for (name, t) in tensors {
        let entry = Entry {
            dtype: "f32".into(),
            shape: t.shape.clone(),
            offset: payload.len() as u64,
        };
        if manifest.insert(name.to_string(), entry).is_some() {
            return Err(Error::Contract(format!("duplicate tensor name {name:?}")));
        }
        for v in &t.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn write_container<'a>(
    path: impl AsRef<Path>,
    tensors: impl IntoIterator<Item = (&'a str, &'a NamedTensor)>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_container_bytes(tensors)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Manifest(format!("WCTF1: {}", msg.into()))
}

pub fn read_container_bytes(bytes: &[u8]) -> Result<BTreeMap<String, NamedTensor>> {
    if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(bad("missing magic header"));
    }
    let len = u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes"));
    let start = 13usize;
    let end = usize::try_from(len)
        .ok()
        .and_then(|l| start.checked_add(l))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("manifest runs past the end of the file"))?;
    let manifest: BTreeMap<String, Entry> =
        serde_json::from_slice(&bytes[start..end]).map_err(|e| bad(format!("bad manifest: {e}")))?;
    let payload = &bytes[end..];
    let mut out = BTreeMap::new();
    for (name, entry) in manifest {
        if entry.dtype != "f32" {
            return Err(bad(format!("tensor {name:?} has unsupported dtype {:?}", entry.dtype)));
        }
        let count: usize = entry.shape.iter().product();
        let lo = usize::try_from(entry.offset).map_err(|_| bad("offset overflow"))?;
        let hi = count
            .checked_mul(4)
            .and_then(|n| lo.checked_add(n))
            .filter(|&h| h <= payload.len())
            .ok_or_else(|| bad(format!("tensor {name:?} runs past the payload")))?;
        let data = payload[lo..hi]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out.insert(
            name,
            NamedTensor {
                shape: entry.shape,
                data,
            },
        );
    }
    Ok(out)
}

pub fn read_container(path: impl AsRef<Path>) -> Result<BTreeMap<String, NamedTensor>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_container_bytes(&bytes)
}
