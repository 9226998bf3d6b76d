//! Checkpoint files: a 16-byte magic, a little-endian `u64` manifest length,
//! a JSON manifest (format version, precision, model config, tensor table,
//! optional trainer metadata) and the raw little-endian tensor payload in
//! manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, ModelConfig};
use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::{Precision, Scalar};
use crate::tensor::Tensor;

const MAGIC: &[u8; 16] = b"HINTCOLOR-CKPT\0\0";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dims: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub precision: Precision,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    /// Parameter tensors come first; this many entries are model weights,
    /// the rest are auxiliary (optimizer state).
    pub param_count: usize,
    #[serde(default)]
    pub trainer: Option<serde_json::Value>,
}

/// Short content hash identifying a checkpoint.
pub fn checkpoint_id(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

impl<T: Scalar> Model<T> {
    pub fn to_checkpoint_bytes(
        &self,
        auxiliary: &[(String, Tensor<T>)],
        trainer: Option<serde_json::Value>,
    ) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut tensors = Vec::new();
        let all = self
            .params
            .iter()
            .map(|p| (p.name.as_str(), &p.value))
            .chain(auxiliary.iter().map(|(n, t)| (n.as_str(), t)));
        for (name, tensor) in all {
            tensors.push(TensorEntry { name: name.to_string(), dims: tensor.dims().to_vec(), offset: payload.len() });
            for &v in tensor.data() {
                v.write_le(&mut payload);
            }
        }
        let manifest = CheckpointManifest {
            format_version: CHECKPOINT_FORMAT_VERSION,
            precision: T::PRECISION,
            config: self.config,
            tensors,
            param_count: self.params.len(),
            trainer,
        };
        let json = serde_json::to_vec_pretty(&manifest)?;
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    /// Parses a checkpoint, converting to `T` if it was stored in another
    /// precision. Returns the model, auxiliary tensors and the manifest.
    #[allow(clippy::type_complexity)]
    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<(Model<T>, Vec<(String, Tensor<T>)>, CheckpointManifest)> {
        if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Checkpoint("not a hintcolor checkpoint (bad magic)".into()));
        }
        let len_bytes: [u8; 8] = bytes[MAGIC.len()..MAGIC.len() + 8].try_into().expect("8 bytes");
        let manifest_len = u64::from_le_bytes(len_bytes) as usize;
        let start = MAGIC.len() + 8;
        let manifest_bytes = bytes
            .get(start..start + manifest_len)
            .ok_or_else(|| Error::Checkpoint("truncated manifest".into()))?;
        let manifest: CheckpointManifest = serde_json::from_slice(manifest_bytes)?;
        if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {}", manifest.format_version)));
        }
        let payload = &bytes[start + manifest_len..];
        let width = manifest.precision.byte_width();

        let mut params = ParamStore::new();
        let mut auxiliary = Vec::new();
        for (i, entry) in manifest.tensors.iter().enumerate() {
            let count: usize = entry.dims.iter().product();
            let raw = payload
                .get(entry.offset..entry.offset + count * width)
                .ok_or_else(|| Error::Checkpoint(format!("payload for `{}` is truncated", entry.name)))?;
            let data: Vec<T> = match manifest.precision {
                Precision::F32 => raw.chunks_exact(4).map(|c| T::lit(f32::read_le(c) as f64)).collect(),
                Precision::F64 => raw.chunks_exact(8).map(|c| T::lit(f64::read_le(c))).collect(),
            };
            let tensor = Tensor::from_vec(&entry.dims, data)?;
            if i < manifest.param_count {
                params.insert(entry.name.clone(), tensor)?;
            } else {
                auxiliary.push((entry.name.clone(), tensor));
            }
        }
        let model = Model::from_parts(manifest.config, params)?;
        Ok((model, auxiliary, manifest))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_checkpoint_bytes(&[], None)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model<T>> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_checkpoint_bytes(&bytes)?.0)
    }
}
