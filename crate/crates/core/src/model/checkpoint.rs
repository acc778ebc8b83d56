//! Checkpoint file: `u64` LE header length, JSON header, then every tensor
//! as little-endian `f32` in layout order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Layout, ModelConfig, ModelParams, TargetNorm};
use crate::error::{Error, Result};
use crate::Scalar;

const FORMAT: &str = "vibroloc-checkpoint-1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ModelParams<T>,
    /// Free-form provenance (pipeline settings, seed, step).
    pub meta: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct HeaderTensor {
    name: String,
    shape: Vec<usize>,
    byte_offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    config: ModelConfig,
    target_norm: TargetNorm,
    tensors: Vec<HeaderTensor>,
    payload_bytes: u64,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

pub(crate) fn encode<T: Scalar>(params: &ModelParams<T>, meta: &BTreeMap<String, String>) -> Vec<u8> {
    let header = Header {
        format: FORMAT.into(),
        config: params.config,
        target_norm: params.target_norm,
        tensors: params
            .layout()
            .specs
            .iter()
            .map(|s| HeaderTensor { name: s.name.clone(), shape: s.shape.clone(), byte_offset: 4 * s.offset as u64 })
            .collect(),
        payload_bytes: 4 * params.data.len() as u64,
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + 4 * params.data.len());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in &params.data {
        out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
    }
    out
}

pub(crate) fn decode<T: Scalar>(bytes: &[u8], path: &Path) -> Result<Checkpoint<T>> {
    let corrupt = |msg: String| Error::Corrupt { path: PathBuf::from(path), msg };
    if bytes.len() < 8 {
        return Err(corrupt("file shorter than the length prefix".into()));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if hlen > body.len() {
        return Err(corrupt(format!("header length {hlen} exceeds file size")));
    }
    let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| corrupt(format!("bad header: {e}")))?;
    if header.format != FORMAT {
        return Err(corrupt(format!("unknown format '{}'", header.format)));
    }
    header.config.validate().map_err(|e| corrupt(format!("invalid config: {e}")))?;
    let payload = &body[hlen..];
    if payload.len() as u64 != header.payload_bytes {
        return Err(corrupt(format!(
            "payload is {} bytes, header says {}",
            payload.len(),
            header.payload_bytes
        )));
    }
    let layout = Layout::new(&header.config);
    let expected = layout.specs.iter().map(|s| (s.name.as_str(), s.shape.as_slice(), 4 * s.offset as u64));
    let found = header.tensors.iter().map(|t| (t.name.as_str(), t.shape.as_slice(), t.byte_offset));
    if !expected.eq(found) || header.payload_bytes != 4 * layout.total as u64 {
        return Err(corrupt("tensor table does not match the stored config".into()));
    }
    let mut params = ModelParams::<T>::zeros(header.config, header.target_norm)?;
    for (v, chunk) in params.data.iter_mut().zip(payload.chunks_exact(4)) {
        *v = T::from(f32::from_le_bytes(chunk.try_into().unwrap())).unwrap();
    }
    Ok(Checkpoint { params, meta: header.meta })
}

/// Writes atomically via a sibling temporary file.
pub fn save_checkpoint<T: Scalar>(params: &ModelParams<T>, meta: &BTreeMap<String, String>, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode(params, meta)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Loads and insists the stored architecture equals `expected`.
pub fn load_checkpoint_expecting<T: Scalar>(path: &Path, expected: &ModelConfig) -> Result<Checkpoint<T>> {
    let ck = load_checkpoint(path)?;
    if ck.params.config != *expected {
        return Err(Error::ConfigMismatch(format!(
            "{} stores {:?}, requested {:?}",
            path.display(),
            ck.params.config,
            expected
        )));
    }
    Ok(ck)
}
