//! Binary checkpoint format.
//!
//! Layout: `b"GLNW"`, one version byte, the manifest length as a
//! little-endian `u64`, the UTF-8 JSON manifest, then every tensor as raw
//! little-endian `f32` in manifest order. The manifest carries a SHA-256 over
//! the whole file (computed with its own hex digits zeroed), so any corrupted
//! byte is detected before anything is decoded.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::io::{hex, write_atomic};
use crate::model::{build_model, Model, ModelSpec};
use crate::tensor::Tensor;
use crate::train::{History, TrainConfig};

pub const MAGIC: &[u8; 4] = b"GLNW";
pub const FORMAT_VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 8;
const CHECKSUM_KEY: &str = "\"checksum\":\"";
const CHECKSUM_HEX_LEN: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    Param,
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub kind: TensorKind,
    pub tensor: Tensor<f32>,
}

/// Everything needed to rebuild and evaluate a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub class_names: Vec<String>,
    pub norm: NormStats,
    /// Parameters, then buffers (batchnorm running statistics), in model order.
    pub tensors: Vec<NamedTensor>,
    pub history: History,
    pub config: Option<TrainConfig>,
    /// SHA-256 of the training RNG state at the end of the run.
    pub rng_digest: String,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    kind: TensorKind,
    shape: Vec<usize>,
    /// Offset in bytes from the start of the data section.
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    spec: ModelSpec,
    class_names: Vec<String>,
    norm: NormStats,
    tensors: Vec<TensorEntry>,
    history: History,
    config: Option<TrainConfig>,
    rng_digest: String,
    checksum: String,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    /// Snapshot of a model's parameters and buffers.
    pub fn from_model(
        model: &Model<f32>,
        class_names: Vec<String>,
        norm: NormStats,
        history: History,
        config: Option<TrainConfig>,
        rng_digest: String,
    ) -> Self {
        let params = model.store.params().iter().map(|p| NamedTensor {
            name: p.name.clone(),
            kind: TensorKind::Param,
            tensor: p.value.clone(),
        });
        let buffers = model.store.buffers().iter().map(|b| NamedTensor {
            name: b.name.clone(),
            kind: TensorKind::Buffer,
            tensor: b.value.clone(),
        });
        Checkpoint {
            spec: model.spec.clone(),
            class_names,
            norm,
            tensors: params.chain(buffers).collect(),
            history,
            config,
            rng_digest,
        }
    }

    /// Rebuilds the model. Every model tensor must be present with the right
    /// kind and shape, and the checkpoint may hold nothing else.
    pub fn to_model(&self) -> Result<Model<f32>> {
        let mut model = build_model::<f32>(&self.spec)?;
        let expected = model.store.params().len() + model.store.buffers().len();
        if self.tensors.len() != expected {
            return Err(corrupt(format!(
                "checkpoint holds {} tensors but the model has {expected}",
                self.tensors.len()
            )));
        }
        for t in &self.tensors {
            let known = match t.kind {
                TensorKind::Param => model.store.param_by_name(&t.name).is_some(),
                TensorKind::Buffer => model.store.buffer_by_name(&t.name).is_some(),
            };
            if !known {
                return Err(corrupt(format!("checkpoint tensor {} ({:?}) is not in the model", t.name, t.kind)));
            }
            model.store.set_named(&t.name, t.tensor.clone()).map_err(|e| corrupt(e.to_string()))?;
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        for t in &self.tensors {
            entries.push(TensorEntry { name: t.name.clone(), kind: t.kind, shape: t.tensor.shape().to_vec(), offset });
            offset += 4 * t.tensor.numel() as u64;
        }
        let manifest = Manifest {
            spec: self.spec.clone(),
            class_names: self.class_names.clone(),
            norm: self.norm,
            tensors: entries,
            history: self.history.clone(),
            config: self.config.clone(),
            rng_digest: self.rng_digest.clone(),
            checksum: "0".repeat(CHECKSUM_HEX_LEN),
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut bytes = Vec::with_capacity(HEADER_LEN + json.len() + offset as usize);
        bytes.extend_from_slice(MAGIC);
        bytes.push(FORMAT_VERSION);
        bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&json);
        for t in &self.tensors {
            for v in t.tensor.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = hex(&Sha256::digest(&bytes));
        let at = checksum_position(&bytes[HEADER_LEN..HEADER_LEN + json.len()])
            .expect("serialized manifest contains the checksum field");
        bytes[HEADER_LEN + at..HEADER_LEN + at + CHECKSUM_HEX_LEN].copy_from_slice(digest.as_bytes());
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(corrupt(format!("file is {} bytes, shorter than the {HEADER_LEN}-byte header", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(corrupt(format!("bad magic {:?}, expected {:?}", &bytes[..4], MAGIC)));
        }
        if bytes[4] != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(bytes[4]));
        }
        let manifest_len = u64::from_le_bytes(bytes[5..HEADER_LEN].try_into().expect("8-byte slice"));
        let manifest_end = (HEADER_LEN as u64)
            .checked_add(manifest_len)
            .filter(|&end| end <= bytes.len() as u64)
            .ok_or_else(|| corrupt(format!("manifest length {manifest_len} runs past the end of a {}-byte file", bytes.len())))?
            as usize;
        let raw_manifest = &bytes[HEADER_LEN..manifest_end];

        let at = checksum_position(raw_manifest).ok_or_else(|| corrupt("manifest has no checksum field"))?;
        let stored = raw_manifest[at..at + CHECKSUM_HEX_LEN].to_vec();
        let mut zeroed = bytes.to_vec();
        zeroed[HEADER_LEN + at..HEADER_LEN + at + CHECKSUM_HEX_LEN].fill(b'0');
        let actual = hex(&Sha256::digest(&zeroed));
        if actual.as_bytes() != stored.as_slice() {
            return Err(corrupt(format!(
                "checksum mismatch: manifest says {}, contents hash to {actual}",
                String::from_utf8_lossy(&stored)
            )));
        }

        let text = std::str::from_utf8(raw_manifest).map_err(|e| corrupt(format!("manifest is not UTF-8: {e}")))?;
        let manifest: Manifest =
            serde_json::from_str(text).map_err(|e| corrupt(format!("manifest is not valid JSON: {e}")))?;
        let data = &bytes[manifest_end..];
        let mut expected_offset = 0u64;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in manifest.tensors {
            if e.offset != expected_offset {
                return Err(corrupt(format!("tensor {} at offset {}, expected {expected_offset}", e.name, e.offset)));
            }
            let numel: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + 4 * numel;
            if end > data.len() {
                return Err(corrupt(format!(
                    "tensor {} needs bytes {start}..{end} but the data section has {} (truncated file)",
                    e.name,
                    data.len()
                )));
            }
            let values = data[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                .collect();
            tensors.push(NamedTensor { name: e.name, kind: e.kind, tensor: Tensor::new(e.shape, values)? });
            expected_offset = end as u64;
        }
        if expected_offset != data.len() as u64 {
            return Err(corrupt(format!(
                "manifest describes {expected_offset} data bytes but the file has {}",
                data.len()
            )));
        }
        Ok(Checkpoint {
            spec: manifest.spec,
            class_names: manifest.class_names,
            norm: manifest.norm,
            tensors,
            history: manifest.history,
            config: manifest.config,
            rng_digest: manifest.rng_digest,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Start of the checksum hex digits inside the raw manifest. The field is
/// serialized last, so the final occurrence of the key is the real one.
fn checksum_position(manifest: &[u8]) -> Option<usize> {
    let key = CHECKSUM_KEY.as_bytes();
    let start = manifest.windows(key.len()).rposition(|w| w == key)? + key.len();
    (start + CHECKSUM_HEX_LEN <= manifest.len()).then_some(start)
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    checkpoint.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::load(path)
}
