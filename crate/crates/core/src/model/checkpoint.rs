//! Checkpoints: a binary tensor blob plus a JSON sidecar.
//!
//! Blob layout (little endian):
//!
//! ```text
//! b"SASW"  u32 version  u32 tensor_count
//! per tensor: u32 name_len, name (utf-8), u32 dims[4], f32 data[prod(dims)]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ModelConfig, ModelError, SasNet};
use crate::fsutil;
use crate::losses::LossWeights;
use crate::tensor::Tensor;
use crate::trainer::AblationFlags;

pub const BLOB_MAGIC: &[u8; 4] = b"SASW";
pub const BLOB_VERSION: u32 = 1;
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint {0} not found")]
    Missing(PathBuf),
    #[error("checkpoint {path} has schema_version {found}, expected {expected}")]
    SchemaMismatch { path: PathBuf, found: u32, expected: u32 },
    #[error("checkpoint {path} is corrupt: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("checkpoint does not fit the model: {0}")]
    Incompatible(String),
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Training provenance stored with the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub step: u64,
    pub epoch: usize,
    pub loss_weights: LossWeights,
    pub ablation: AblationFlags,
    pub seed: u64,
    /// Best validation NCC seen so far, if any.
    #[serde(default)]
    pub best_val_ncc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub schema_version: u32,
    pub c_s: usize,
    pub c_a: usize,
    pub base_channels: usize,
    pub levels: usize,
    pub parameter_count: usize,
    pub step: u64,
    pub loss_weights: LossWeights,
    pub model: ModelConfig,
    pub training: TrainingInfo,
}

impl CheckpointMeta {
    pub fn new(net: &SasNet<f32>, training: TrainingInfo) -> Self {
        let c = *net.config();
        Self {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            c_s: c.c_s,
            c_a: c.c_a,
            base_channels: c.base_channels,
            levels: c.levels,
            parameter_count: net.parameter_count(),
            step: training.step,
            loss_weights: training.loss_weights,
            model: c,
            training,
        }
    }
}

/// Sidecar path for a blob path: `x.sasw` -> `x.json`.
pub fn sidecar_path(blob: &Path) -> PathBuf {
    blob.with_extension("json")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            CheckpointError::Missing(path.to_path_buf())
        } else {
            CheckpointError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

pub fn encode_tensors(named: &[(&str, &Tensor<f32>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(BLOB_MAGIC);
    out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in named {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_tensors(bytes: &[u8], path: &Path) -> Result<Vec<(String, Tensor<f32>)>, CheckpointError> {
    let corrupt = |reason: &str| CheckpointError::Corrupt {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8], CheckpointError> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| corrupt("truncated"))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != BLOB_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes"));
    let version = u32_at(take(4)?);
    if version != BLOB_VERSION {
        return Err(corrupt(&format!("unsupported blob version {version}")));
    }
    let count = u32_at(take(4)?) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u32_at(take(4)?) as usize;
        let name = String::from_utf8(take(len)?.to_vec()).map_err(|_| corrupt("tensor name is not utf-8"))?;
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = u32_at(take(4)?) as usize;
        }
        let numel: usize = shape.iter().product();
        let raw = take(numel.checked_mul(4).ok_or_else(|| corrupt("tensor too large"))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out.push((name, Tensor::from_vec(shape, data)));
    }
    if pos != bytes.len() {
        return Err(corrupt("trailing bytes"));
    }
    Ok(out)
}

pub fn write_blob(path: &Path, named: &[(&str, &Tensor<f32>)]) -> Result<(), CheckpointError> {
    fsutil::write_atomic(path, &encode_tensors(named)).map_err(io_err(path))
}

pub fn read_blob(path: &Path) -> Result<Vec<(String, Tensor<f32>)>, CheckpointError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_tensors(&bytes, path)
}

/// Writes `blob` and its JSON sidecar.
pub fn save_checkpoint(
    blob: &Path,
    net: &SasNet<f32>,
    training: TrainingInfo,
) -> Result<CheckpointMeta, CheckpointError> {
    let named: Vec<(&str, &Tensor<f32>)> = net
        .params()
        .names()
        .iter()
        .map(String::as_str)
        .zip(net.params().tensors())
        .collect();
    write_blob(blob, &named)?;
    let meta = CheckpointMeta::new(net, training);
    let side = sidecar_path(blob);
    fsutil::write_json_atomic(&side, &meta).map_err(io_err(&side))?;
    Ok(meta)
}

pub fn read_meta(blob: &Path) -> Result<CheckpointMeta, CheckpointError> {
    let side = sidecar_path(blob);
    let text = fs::read_to_string(&side).map_err(io_err(&side))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CheckpointError::Corrupt {
        path: side.clone(),
        reason: e.to_string(),
    })?;
    let found = value.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != CHECKPOINT_SCHEMA_VERSION {
        return Err(CheckpointError::SchemaMismatch {
            path: side,
            found,
            expected: CHECKPOINT_SCHEMA_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|e| CheckpointError::Corrupt {
        path: side,
        reason: e.to_string(),
    })
}

/// Rebuilds the network described by the sidecar and fills in the weights.
pub fn load_checkpoint(blob: &Path) -> Result<(SasNet<f32>, CheckpointMeta), CheckpointError> {
    if !blob.exists() {
        return Err(CheckpointError::Missing(blob.to_path_buf()));
    }
    let meta = read_meta(blob)?;
    let mut net = SasNet::<f32>::new(meta.model, 0)?;
    let tensors = read_blob(blob)?;
    if tensors.len() != net.params().len() {
        return Err(CheckpointError::Incompatible(format!(
            "blob has {} tensors, model expects {}",
            tensors.len(),
            net.params().len()
        )));
    }
    for (name, t) in tensors {
        let idx = net
            .params()
            .index_of(&name)
            .ok_or_else(|| CheckpointError::Incompatible(format!("unknown tensor {name}")))?;
        let slot = net.params_mut().get_mut(idx);
        if slot.shape() != t.shape() {
            return Err(CheckpointError::Incompatible(format!(
                "tensor {name} has shape {:?}, model expects {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    if net.parameter_count() != meta.parameter_count {
        return Err(CheckpointError::Incompatible(format!(
            "sidecar parameter_count {} != {}",
            meta.parameter_count,
            net.parameter_count()
        )));
    }
    Ok((net, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            c_s: 8,
            c_a: 4,
            base_channels: 4,
            appearance_channels: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.sasw");
        let net = SasNet::<f32>::new(small(), 9).unwrap();
        let info = TrainingInfo {
            step: 12,
            epoch: 2,
            ..TrainingInfo::default()
        };
        let meta = save_checkpoint(&p, &net, info).unwrap();
        let (loaded, meta2) = load_checkpoint(&p).unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(loaded.params(), net.params());
        assert_eq!(meta2.step, 12);
    }

    #[test]
    fn missing_and_schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("none.sasw");
        assert!(matches!(load_checkpoint(&p), Err(CheckpointError::Missing(_))));
        let net = SasNet::<f32>::new(small(), 9).unwrap();
        save_checkpoint(&p, &net, TrainingInfo::default()).unwrap();
        let side = sidecar_path(&p);
        let text = fs::read_to_string(&side)
            .unwrap()
            .replace("\"schema_version\": 1", "\"schema_version\": 7");
        fs::write(&side, text).unwrap();
        assert!(matches!(
            load_checkpoint(&p),
            Err(CheckpointError::SchemaMismatch { found: 7, .. })
        ));
    }

    #[test]
    fn corrupt_blob() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.sasw");
        let net = SasNet::<f32>::new(small(), 9).unwrap();
        save_checkpoint(&p, &net, TrainingInfo::default()).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(CheckpointError::Corrupt { .. })));
    }
}
