//! Checkpoint container.
//!
//! Layout: the 8-byte magic `SAMOMCKP`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a UTF-8 JSON header, then
//! every tensor's values as little-endian IEEE-754 `f32` in header order.
//! The header carries the model configuration, the training-step counter and
//! a `{group, name, shape}` entry per tensor. Groups are `param`, and
//! optionally `adam_m` / `adam_v` for optimizer moments.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ExtractorConfig, ModelError, ModelParams, Tensor};

const MAGIC: &[u8; 8] = b"SAMOMCKP";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("truncated checkpoint payload")]
    Truncated,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerMoments {
    pub t: u64,
    pub m: ModelParams,
    pub v: ModelParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ExtractorConfig,
    pub step: u64,
    pub params: ModelParams,
    pub optimizer: Option<OptimizerMoments>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    group: String,
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ExtractorConfig,
    step: u64,
    optimizer_t: Option<u64>,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut groups: Vec<(&str, &ModelParams)> = vec![("param", &self.params)];
        if let Some(opt) = &self.optimizer {
            groups.push(("adam_m", &opt.m));
            groups.push(("adam_v", &opt.v));
        }
        let mut entries = Vec::new();
        let mut payload = Vec::new();
        for (group, params) in groups {
            for (name, t) in params.iter() {
                entries.push(TensorEntry {
                    group: group.to_string(),
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                });
                for &v in t.data() {
                    payload.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            step: self.step,
            optimizer_t: self.optimizer.as_ref().map(|o| o.t),
            tensors: entries,
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(20 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| CheckpointError::Truncated)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut u32b = [0u8; 4];
        r.read_exact(&mut u32b).map_err(|_| CheckpointError::Truncated)?;
        let version = u32::from_le_bytes(u32b);
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let mut u64b = [0u8; 8];
        r.read_exact(&mut u64b).map_err(|_| CheckpointError::Truncated)?;
        let header_len = u64::from_le_bytes(u64b) as usize;
        if r.len() < header_len {
            return Err(CheckpointError::Truncated);
        }
        let header: Header = serde_json::from_slice(&r[..header_len])?;
        r = &r[header_len..];

        let mut groups: BTreeMap<String, BTreeMap<String, Tensor>> = BTreeMap::new();
        for entry in header.tensors {
            let count: usize = entry.shape.iter().product();
            if r.len() < count * 4 {
                return Err(CheckpointError::Truncated);
            }
            let data = r[..count * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            r = &r[count * 4..];
            groups
                .entry(entry.group)
                .or_default()
                .insert(entry.name, Tensor::from_vec(&entry.shape, data)?);
        }
        if !r.is_empty() {
            return Err(CheckpointError::Header(serde::de::Error::custom(
                "trailing bytes after payload",
            )));
        }
        let params = ModelParams::from_tensors(groups.remove("param").unwrap_or_default());
        params.validate(&header.config)?;
        let optimizer = match (header.optimizer_t, groups.remove("adam_m"), groups.remove("adam_v")) {
            (Some(t), Some(m), Some(v)) => Some(OptimizerMoments {
                t,
                m: ModelParams::from_tensors(m),
                v: ModelParams::from_tensors(v),
            }),
            _ => None,
        };
        Ok(Self {
            config: header.config,
            step: header.step,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let cfg = ExtractorConfig {
            n_filters: 8,
            kernel_len: 4,
            bottleneck_ch: 4,
            conv_ch: 6,
            n_repeats: 1,
            blocks_per_repeat: 2,
            embed_dim: 3,
            fusion_block_index: 1,
            n_outputs: 1,
        };
        let params = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let m = params.zeros_like();
        let v = params.clone();
        Checkpoint {
            config: cfg,
            step: 42,
            params,
            optimizer: Some(OptimizerMoments { t: 42, m, v }),
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let c = sample();
        let a = c.to_bytes();
        let b = Checkpoint::from_bytes(&a).unwrap().to_bytes();
        assert_eq!(a, b);
        let loaded = Checkpoint::from_bytes(&a).unwrap();
        assert_eq!(loaded.step, 42);
        assert_eq!(loaded.config, c.config);
        assert!(loaded.optimizer.is_some());
    }

    #[test]
    fn rejects_corruption() {
        let mut a = sample().to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&a[..a.len() - 1]), Err(CheckpointError::Truncated)));
        a[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&a), Err(CheckpointError::BadMagic)));
    }
}
