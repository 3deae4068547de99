//! Weight checkpoints: one binary file holding a JSON header (config plus
//! named tensor offsets) followed by raw little-endian f64 payloads.
//!
//! Layout: `[u64 le header_len][header json][payload]`. Offsets in the header
//! are element offsets into the payload. The sha256 of the whole file doubles
//! as the model digest that circuits and score files pin themselves to.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::Tensor;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

/// Serialize a model to the checkpoint byte format.
pub fn model_bytes(model: &Model) -> Vec<u8> {
    let named = model.weights.named();
    let mut entries = Vec::with_capacity(named.len());
    let mut offset = 0usize;
    for (name, t) in &named {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
            len: t.numel(),
        });
        offset += t.numel();
    }
    let header = Header {
        config: model.config.clone(),
        tensors: entries,
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");

    let mut out = Vec::with_capacity(16 + header_json.len() + offset * 8);
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    for (_, t) in &named {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn digest_of(model: &Model) -> String {
    hex_digest(&model_bytes(model))
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Write a checkpoint; returns its digest.
pub fn save_model(model: &Model, path: &Path) -> Result<String> {
    let bytes = model_bytes(model);
    fs::write(path, &bytes)?;
    Ok(hex_digest(&bytes))
}

/// Load a checkpoint; returns the model and the file digest.
pub fn load_model(path: &Path) -> Result<(Model, String)> {
    let bytes = fs::read(path)?;
    let digest = hex_digest(&bytes);
    let bad = |detail: &str| Error::Format {
        path: path.display().to_string(),
        detail: detail.to_string(),
    };
    if bytes.len() < 8 {
        return Err(bad("file too short for header length"));
    }
    let header_len = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + header_len {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&bytes[8..8 + header_len])
        .map_err(|e| bad(&format!("header parse: {e}")))?;
    let payload = &bytes[8 + header_len..];
    if payload.len() % 8 != 0 {
        return Err(bad("payload not a multiple of 8 bytes"));
    }

    // start from a structurally correct model, then fill tensors by name
    let mut model = Model::new(header.config.clone());
    let read_tensor = |entry: &TensorEntry| -> Result<Tensor> {
        let start = entry.offset * 8;
        let end = start + entry.len * 8;
        if end > payload.len() {
            return Err(bad(&format!("tensor {} exceeds payload", entry.name)));
        }
        let data: Vec<f64> = payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(entry.shape.clone(), data)
            .map_err(|_| bad(&format!("tensor {} shape/len mismatch", entry.name)))
    };

    let mut loaded = std::collections::BTreeMap::new();
    for entry in &header.tensors {
        loaded.insert(entry.name.clone(), read_tensor(entry)?);
    }
    for (name, slot) in model.weights.named_mut() {
        let t = loaded
            .remove(&name)
            .ok_or_else(|| bad(&format!("missing tensor {name}")))?;
        if t.shape() != slot.shape() {
            return Err(bad(&format!(
                "tensor {name} has shape {:?}, expected {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = Arc::new(t);
    }
    if let Some((name, _)) = loaded.into_iter().next() {
        return Err(bad(&format!("unexpected tensor {name}")));
    }
    Ok((model, digest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn roundtrip_is_bit_exact() {
        let config = ModelConfig::new(2, 2, 8, 4, 16, 50, 64, 7);
        let model = Model::new(config);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let digest = save_model(&model, &path).unwrap();
        let (loaded, digest2) = load_model(&path).unwrap();
        assert_eq!(digest, digest2);
        assert_eq!(digest, loaded.digest());
        for ((n1, t1), (n2, t2)) in model.weights.named().iter().zip(loaded.weights.named()) {
            assert_eq!(n1, &n2);
            assert_eq!(t1.data(), t2.data(), "tensor {n1} differs");
        }
        assert_eq!(model.config, loaded.config);
    }

    #[test]
    fn truncated_file_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, [1, 2, 3]).unwrap();
        assert!(matches!(
            load_model(&path),
            Err(Error::Format { .. })
        ));
    }
}
