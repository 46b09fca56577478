//! Checkpoint file format: the 8-byte magic "FLOWBST1", a little-endian u64
//! manifest length, a UTF-8 JSON manifest (architecture, tensor table,
//! metadata, seed) and the tensor payload as little-endian f64 in table
//! order. Round trips are byte-identical.

use crate::error::{Error, Result};
use crate::flow::{Architecture, ModelParams};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"FLOWBST1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub arch: Architecture,
    pub tensors: Vec<TensorEntry>,
    /// Training metadata; keys are serialized in sorted order.
    pub meta: serde_json::Map<String, serde_json::Value>,
    pub seed: u64,
}

pub fn checkpoint_to_bytes(
    params: &ModelParams,
    meta: serde_json::Map<String, serde_json::Value>,
    seed: u64,
) -> Result<Vec<u8>> {
    let named = params.named_tensors();
    let mut tensors = Vec::with_capacity(named.len());
    let mut offset = 0u64;
    for (name, t) in &named {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape.clone(),
            offset,
        });
        offset += (t.len() * 8) as u64;
    }
    let manifest = Manifest {
        arch: params.arch,
        tensors,
        meta,
        seed,
    };
    let manifest_json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(16 + manifest_json.len() + offset as usize);
    out.write_all(MAGIC)?;
    out.write_all(&(manifest_json.len() as u64).to_le_bytes())?;
    out.write_all(&manifest_json)?;
    for (_, t) in &named {
        for v in &t.data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(out)
}

pub fn save_checkpoint(
    params: &ModelParams,
    meta: serde_json::Map<String, serde_json::Value>,
    seed: u64,
    path: &Path,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, checkpoint_to_bytes(params, meta, seed)?)?;
    Ok(())
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(ModelParams, Manifest)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::CheckpointFormat("bad magic".into()));
    }
    let mut len_bytes = [0u8; 8];
    len_bytes.copy_from_slice(&bytes[8..16]);
    let manifest_len = u64::from_le_bytes(len_bytes) as usize;
    if bytes.len() < 16 + manifest_len {
        return Err(Error::CheckpointFormat("truncated manifest".into()));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[16..16 + manifest_len])?;
    let payload = &bytes[16 + manifest_len..];

    let expected: usize = manifest
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>() * 8)
        .sum();
    if payload.len() != expected {
        return Err(Error::CheckpointFormat(format!(
            "payload length {} does not match tensor table total {expected}",
            payload.len()
        )));
    }

    let mut params = ModelParams::zeros(manifest.arch);
    let mut by_name: std::collections::HashMap<&str, &TensorEntry> = manifest
        .tensors
        .iter()
        .map(|t| (t.name.as_str(), t))
        .collect();
    for (name, tensor) in params.named_tensors_mut() {
        let entry = by_name.remove(name.as_str()).ok_or_else(|| {
            Error::CheckpointFormat(format!("missing tensor {name}"))
        })?;
        if entry.shape != tensor.shape {
            return Err(Error::CheckpointFormat(format!(
                "tensor {name} shape {:?} != expected {:?}",
                entry.shape, tensor.shape
            )));
        }
        let start = entry.offset as usize;
        let n = tensor.len();
        if start + 8 * n > payload.len() {
            return Err(Error::CheckpointFormat(format!(
                "tensor {name} payload out of range"
            )));
        }
        for i in 0..n {
            let mut b = [0u8; 8];
            b.copy_from_slice(&payload[start + 8 * i..start + 8 * (i + 1)]);
            tensor.data[i] = f64::from_le_bytes(b);
        }
    }
    if !by_name.is_empty() {
        return Err(Error::CheckpointFormat(format!(
            "unknown tensors in table: {:?}",
            by_name.keys().collect::<Vec<_>>()
        )));
    }
    Ok((params, manifest))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, Manifest)> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> Architecture {
        Architecture {
            width: 8,
            depth: 2,
            heads: 2,
            freq_count: 3,
            input_dim: 2,
            cond_dim: 2,
            ff_hidden: 16,
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let params = ModelParams::init(arch(), 42).unwrap();
        let mut meta = serde_json::Map::new();
        meta.insert("epochs".into(), serde_json::json!(17));
        meta.insert("problem".into(), serde_json::json!("heilbronn"));
        let bytes = checkpoint_to_bytes(&params, meta, 42).unwrap();
        let (loaded, manifest) = checkpoint_from_bytes(&bytes).unwrap();
        let rebytes = checkpoint_to_bytes(&loaded, manifest.meta.clone(), manifest.seed).unwrap();
        assert_eq!(bytes, rebytes);
        for ((na, ta), (nb, tb)) in params
            .named_tensors()
            .iter()
            .zip(loaded.named_tensors().iter())
        {
            assert_eq!(na, nb);
            assert_eq!(ta.shape, tb.shape);
            for (x, y) in ta.data.iter().zip(tb.data.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn payload_length_is_validated() {
        let params = ModelParams::init(arch(), 1).unwrap();
        let mut bytes =
            checkpoint_to_bytes(&params, serde_json::Map::new(), 1).unwrap();
        bytes.truncate(bytes.len() - 8);
        assert!(matches!(
            checkpoint_from_bytes(&bytes),
            Err(Error::CheckpointFormat(_))
        ));
    }

    #[test]
    fn bad_magic_rejected() {
        let params = ModelParams::init(arch(), 1).unwrap();
        let mut bytes = checkpoint_to_bytes(&params, serde_json::Map::new(), 1).unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            checkpoint_from_bytes(&bytes),
            Err(Error::CheckpointFormat(_))
        ));
    }
}
