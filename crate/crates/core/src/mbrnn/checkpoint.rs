//! Checkpoint layout: `u64` LE manifest length, JSON manifest, then f32 LE
//! tensor payloads in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{tensor_slots, Arch, ModelParams};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub endianness: String,
    pub hyperparams: Arch,
    pub tensors: Vec<TensorEntry>,
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn manifest_of(arch: &Arch) -> Manifest {
    Manifest {
        format_version: FORMAT_VERSION,
        endianness: "little".into(),
        hyperparams: *arch,
        tensors: tensor_slots(arch)
            .into_iter()
            .map(|s| TensorEntry { name: s.name, shape: s.shape, dtype: "f32".into() })
            .collect(),
    }
}

pub fn to_bytes(p: &ModelParams<f32>) -> Result<Vec<u8>> {
    let manifest = serde_json::to_vec(&manifest_of(&p.arch))?;
    let mut out = Vec::with_capacity(8 + manifest.len() + 4 * p.len());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    for v in &p.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams<f32>> {
    let head: [u8; 8] = bytes
        .get(..8)
        .ok_or_else(|| fmt_err("checkpoint shorter than its length prefix"))?
        .try_into()
        .expect("8 bytes");
    let mlen = usize::try_from(u64::from_le_bytes(head)).map_err(|_| fmt_err("manifest length overflows"))?;
    let body = bytes
        .get(8..8usize.saturating_add(mlen))
        .filter(|b| b.len() == mlen)
        .ok_or_else(|| fmt_err("checkpoint truncated inside the manifest"))?;
    let m: Manifest = serde_json::from_slice(body).map_err(|e| fmt_err(format!("bad manifest: {e}")))?;
    if m.endianness != "little" {
        return Err(fmt_err(format!("payload endianness '{}' is not supported; expected 'little'", m.endianness)));
    }
    if m.format_version != FORMAT_VERSION {
        return Err(fmt_err(format!("format version {} is not supported", m.format_version)));
    }
    m.hyperparams.validate().map_err(|e| fmt_err(e.to_string()))?;
    let expected = manifest_of(&m.hyperparams);
    if m.tensors != expected.tensors {
        return Err(fmt_err("tensor list does not match the declared architecture"));
    }
    let n: usize = m.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    let payload = &bytes[8 + mlen..];
    if payload.len() != 4 * n {
        return Err(fmt_err(format!("payload has {} bytes, manifest declares {}", payload.len(), 4 * n)));
    }
    let data = payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
    Ok(ModelParams { arch: m.hyperparams, data })
}

pub fn save(p: &ModelParams<f32>, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(p)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelParams<f32>> {
    from_bytes(&std::fs::read(path)?)
}
