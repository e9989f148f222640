//! Checkpoint files.
//!
//! A checkpoint is a JSON metadata document, a `%%BLOB%%` marker line and a
//! flat little-endian `f32` blob holding every tensor in manifest order. The
//! metadata lists each tensor's name, shape and byte offset into the blob.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::config::SystemConfig;
use crate::error::{Error, Result};

use super::params::{manifest, GnnHyperparams, GnnParameters};

pub const FORMAT: &str = "cfisac-gnn";
pub const FORMAT_VERSION: u32 = 1;
const MARKER: &[u8] = b"\n%%BLOB%%\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Metadata {
    format: String,
    version: u32,
    hyper: GnnHyperparams,
    system: Option<SystemConfig>,
    tensors: Vec<TensorEntry>,
    blob_bytes: usize,
    blob_sha256: String,
}

/// Parameters plus the scenario they were trained for.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: GnnParameters<f32>,
    pub system: Option<SystemConfig>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn encode_checkpoint(
    params: &GnnParameters<f32>,
    system: Option<&SystemConfig>,
) -> Result<Vec<u8>> {
    let mut blob = Vec::with_capacity(4 * params.count());
    let mut tensors = Vec::new();
    for (slot, t) in manifest(params.hyper()).into_iter().zip(params.tensors()) {
        tensors.push(TensorEntry {
            name: slot.name,
            shape: slot.shape,
            offset: blob.len(),
            len: t.len(),
        });
        for x in t.data() {
            blob.extend_from_slice(&x.to_le_bytes());
        }
    }
    let meta = Metadata {
        format: FORMAT.into(),
        version: FORMAT_VERSION,
        hyper: *params.hyper(),
        system: system.copied(),
        tensors,
        blob_bytes: blob.len(),
        blob_sha256: sha256_hex(&blob),
    };
    let mut out = serde_json::to_vec_pretty(&meta)?;
    out.extend_from_slice(MARKER);
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let split = bytes
        .windows(MARKER.len())
        .position(|w| w == MARKER)
        .ok_or_else(|| Error::Corrupt("checkpoint has no blob marker".into()))?;
    let meta: Metadata = serde_json::from_slice(&bytes[..split])?;
    if meta.format != FORMAT {
        return Err(Error::format(
            "format",
            format!("expected {FORMAT:?}, got {:?}", meta.format),
        ));
    }
    if meta.version != FORMAT_VERSION {
        return Err(Error::format(
            "version",
            format!("unsupported version {}", meta.version),
        ));
    }
    meta.hyper.validate()?;
    let blob = &bytes[split + MARKER.len()..];
    if blob.len() != meta.blob_bytes {
        return Err(Error::Corrupt(format!(
            "blob holds {} bytes, metadata declares {}",
            blob.len(),
            meta.blob_bytes
        )));
    }
    if sha256_hex(blob) != meta.blob_sha256 {
        return Err(Error::Corrupt("blob checksum mismatch".into()));
    }
    let slots = manifest(&meta.hyper);
    if slots.len() != meta.tensors.len() {
        return Err(Error::Corrupt(format!(
            "{} tensors listed, architecture needs {}",
            meta.tensors.len(),
            slots.len()
        )));
    }
    let mut tensors = Vec::with_capacity(slots.len());
    for (slot, entry) in slots.iter().zip(&meta.tensors) {
        if slot.name != entry.name || slot.shape != entry.shape || slot.len() != entry.len {
            return Err(Error::Corrupt(format!(
                "tensor {} {:?} does not match expected {} {:?}",
                entry.name, entry.shape, slot.name, slot.shape
            )));
        }
        let end = entry
            .len
            .checked_mul(4)
            .and_then(|n| n.checked_add(entry.offset))
            .filter(|end| *end <= blob.len())
            .ok_or_else(|| Error::Corrupt(format!("tensor {} runs past the blob", entry.name)))?;
        let data = blob[entry.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor::new(&entry.shape, data)?);
    }
    Ok(Checkpoint {
        params: GnnParameters::from_tensors(meta.hyper, tensors)?,
        system: meta.system,
    })
}

/// Writes a checkpoint and returns the SHA-256 of the file contents.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    params: &GnnParameters<f32>,
    system: Option<&SystemConfig>,
) -> Result<String> {
    let bytes = encode_checkpoint(params, system)?;
    fs::write(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
