//! Binary checkpoint archive.
//!
//! Layout: the 8 magic bytes `CKPT0001`, a little-endian `u64` manifest
//! length, the manifest as UTF-8 JSON, then every tensor's `f64` values in
//! little-endian order at the byte offsets the manifest lists (relative to
//! the start of the data section).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Model, ModelConfig};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 8] = b"CKPT0001";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorKind {
    Param,
    Buffer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub kind: TensorKind,
    pub shape: Shape,
    /// Byte offset into the data section.
    pub offset: u64,
    /// Number of `f64` values.
    pub len: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config_hash: String,
    pub config: ModelConfig,
    /// Completed training epochs, if saved during training.
    pub epoch: Option<usize>,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(path: &Path, model: &Model, epoch: Option<usize>) -> Result<()> {
    let mut tensors = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    let mut push = |name: &str, kind, t: &Tensor| {
        tensors.push(TensorEntry {
            name: name.to_string(),
            kind,
            shape: t.shape(),
            offset: data.len() as u64,
            len: t.numel() as u64,
        });
        for v in t.data() {
            data.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (_, p) in model.store.iter() {
        push(&p.name, TensorKind::Param, &p.value);
    }
    for (_, b) in model.store.buffers() {
        push(&b.name, TensorKind::Buffer, &b.value);
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config_hash: model.config.hash(),
        config: model.config.clone(),
        epoch,
        tensors,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(16 + json.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    fs::write(path, out).map_err(|e| Error::file(path, e))
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Reads and validates the header and manifest; returns the data section.
pub fn read_manifest(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json = bytes
        .get(16..16 + len)
        .ok_or_else(|| bad("truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(json)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {}", manifest.format_version)));
    }
    if manifest.config.hash() != manifest.config_hash {
        return Err(bad("config hash does not match the embedded config"));
    }
    Ok((manifest, &bytes[16 + len..]))
}

/// Copies every stored tensor into `model`, which must have exactly the
/// same tensor names and shapes.
pub fn load_into(model: &mut Model, manifest: &Manifest, data: &[u8]) -> Result<()> {
    if manifest.config_hash != model.config.hash() {
        return Err(bad(format!(
            "config hash mismatch: checkpoint {} vs model {}",
            manifest.config_hash,
            model.config.hash()
        )));
    }
    let expected = model.store.iter().count() + model.store.buffers().count();
    if manifest.tensors.len() != expected {
        return Err(bad(format!(
            "checkpoint has {} tensors, model expects {expected}",
            manifest.tensors.len()
        )));
    }
    for e in &manifest.tensors {
        let start = e.offset as usize;
        let end = start + 8 * e.len as usize;
        let raw = data
            .get(start..end)
            .ok_or_else(|| bad(format!("tensor {} runs past the end of the file", e.name)))?;
        let vals: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::from_vec(e.shape, vals)?;
        let slot = match e.kind {
            TensorKind::Param => model.store.id(&e.name).map(|id| &mut model.store.get_mut(id).value),
            TensorKind::Buffer => model.store.buffer_id(&e.name).map(|id| model.store.buffer_mut(id)),
        }
        .ok_or_else(|| bad(format!("model has no tensor named {}", e.name)))?;
        if slot.shape() != e.shape {
            return Err(bad(format!(
                "tensor {} has shape {} in the checkpoint but {} in the model",
                e.name,
                e.shape,
                slot.shape()
            )));
        }
        *slot = t;
    }
    Ok(())
}

/// Rebuilds the model from the embedded config and loads its tensors.
pub fn load_checkpoint(path: &Path) -> Result<(Model, Manifest)> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    let (manifest, data) = read_manifest(&bytes).map_err(|e| Error::file(path, e))?;
    let mut model = Model::build(manifest.config.clone(), 0)?;
    load_into(&mut model, &manifest, data).map_err(|e| Error::file(path, e))?;
    Ok((model, manifest))
}
