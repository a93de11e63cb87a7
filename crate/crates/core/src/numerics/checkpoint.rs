//! Tensor bundle file: an 8-byte magic, a little-endian `u64` manifest
//! length, the JSON manifest, then every tensor as raw little-endian `f32`.
//! Manifest offsets are byte offsets into the payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"VGEMBCK1";

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

pub fn write_tensor_file(
    path: &Path,
    meta: serde_json::Value,
    tensors: &[(String, Tensor<f32>)],
) -> Result<()> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut payload = Vec::new();
    for (name, t) in tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: payload.len() as u64,
        });
        for &x in t.data() {
            payload.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest = serde_json::to_vec(&Manifest {
        meta,
        tensors: entries,
    })
    .map_err(|e| Error::Data(format!("cannot encode manifest: {e}")))?;

    let mut out = Vec::with_capacity(16 + manifest.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&payload);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Manifest and named tensors of a tensor file.
pub type TensorFile = (serde_json::Value, Vec<(String, Tensor<f32>)>);

pub fn read_tensor_file(path: &Path) -> Result<TensorFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Format {
        path: path.to_path_buf(),
        line: 0,
        msg: msg.to_string(),
    };
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let mend = 16usize
        .checked_add(mlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated manifest"))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[16..mend]).map_err(|e| bad(&format!("manifest: {e}")))?;
    let payload = &bytes[mend..];
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for e in manifest.tensors {
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + 4 * n;
        if end > payload.len() {
            return Err(bad(&format!("tensor {} runs past end of file", e.name)));
        }
        let data = payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((e.name, Tensor::from_vec(&e.shape, data)?));
    }
    Ok((manifest.meta, tensors))
}
