//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `VQAICKPT`, a little-endian `u32` format
//! version, a `u64` header length, the JSON header, the raw little-endian
//! payload (parameters, then Adam first and second moments, in header
//! order), and a SHA-256 digest of everything before it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vqai_tensor::optim::Adam;
use vqai_tensor::{Scalar, Tensor};

use super::LossRecord;
use crate::config::RunConfig;
use crate::ingest::atomic_write;
use crate::models::Components;

pub const MAGIC: &[u8; 8] = b"VQAICKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
    #[error("checkpoint config hash {found} does not match {expected}")]
    ConfigHashMismatch { expected: String, found: String },
    #[error("checkpoint has not been trained (step 0)")]
    UntrainedModel,
}

/// Trained weights with the optimizer state and run bookkeeping.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub components: Components<T>,
    pub adam: Adam<T>,
    pub step: u64,
    pub run: RunConfig,
    pub history: Vec<LossRecord>,
}

#[derive(Serialize, Deserialize)]
struct AdamHeader {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config_hash: String,
    scalar: String,
    step: u64,
    run: RunConfig,
    params: Vec<(String, Vec<usize>)>,
    adam: AdamHeader,
    history: Vec<LossRecord>,
}

fn corrupt(m: impl Into<String>) -> CheckpointError {
    CheckpointError::CorruptFile(m.into())
}

impl<T: Scalar> Checkpoint<T> {
    pub fn config_hash(&self) -> String {
        self.components.cfg.hash()
    }

    /// Refuses step-0 checkpoints unless `allow_untrained`.
    pub fn require_trained(&self, allow_untrained: bool) -> Result<(), CheckpointError> {
        if self.step == 0 && !allow_untrained {
            return Err(CheckpointError::UntrainedModel);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let store = &self.components.store;
        let header = Header {
            config_hash: self.config_hash(),
            scalar: T::NAME.to_string(),
            step: self.step,
            run: self.run.clone(),
            params: store.entries().iter().map(|e| (e.name.clone(), e.value.shape().to_vec())).collect(),
            adam: AdamHeader {
                lr: self.adam.lr,
                beta1: self.adam.beta1,
                beta2: self.adam.beta2,
                eps: self.adam.eps,
                step: self.adam.step,
            },
            history: self.history.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let tensors = store
            .entries()
            .iter()
            .map(|e| &e.value)
            .chain(self.adam.m.iter())
            .chain(self.adam.v.iter());
        for t in tensors {
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        atomic_write(path, &self.to_bytes()).map_err(|e| match e {
            crate::ingest::IngestError::Io { path, source } => CheckpointError::Io { path, source },
            other => corrupt(other.to_string()),
        })
    }

    /// Parses a checkpoint. With `expected`, the stored config hash must
    /// match it unless `allow_mismatch`.
    pub fn from_bytes(bytes: &[u8], expected: Option<&str>, allow_mismatch: bool) -> Result<Self, CheckpointError> {
        if bytes.len() < 8 + 4 + 8 + 32 || &bytes[..8] != MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(corrupt(format!("format version {version}")));
        }
        let hlen = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
        let json = body.get(20..20 + hlen).ok_or_else(|| corrupt("truncated header"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| corrupt(format!("header: {e}")))?;
        if let Some(exp) = expected {
            if exp != header.config_hash && !allow_mismatch {
                return Err(CheckpointError::ConfigHashMismatch {
                    expected: exp.to_string(),
                    found: header.config_hash,
                });
            }
        }
        let width = match header.scalar.as_str() {
            "f32" => 4,
            "f64" => 8,
            s => return Err(corrupt(format!("unknown scalar type {s}"))),
        };
        let read = |b: &[u8]| -> T {
            if width == 4 {
                T::lit(f32::read_le(b) as f64)
            } else {
                T::lit(f64::read_le(b))
            }
        };
        let model = header.run.model.clone();
        if model.hash() != header.config_hash {
            return Err(corrupt("stored config does not match its hash"));
        }
        let mut components = Components::<T>::new(&model, 0).map_err(|e| corrupt(e.to_string()))?;
        if components.store.len() != header.params.len() {
            return Err(corrupt(format!("{} parameters, expected {}", header.params.len(), components.store.len())));
        }
        let mut payload = &body[20 + hlen..];
        let mut take = |shape: &[usize]| -> Result<Tensor<T>, CheckpointError> {
            let n: usize = shape.iter().product();
            if payload.len() < n * width {
                return Err(corrupt("truncated payload"));
            }
            let (head, rest) = payload.split_at(n * width);
            payload = rest;
            Ok(Tensor::from_vec(shape, head.chunks_exact(width).map(read).collect()))
        };
        for (i, (name, shape)) in header.params.iter().enumerate() {
            let id = components.store.ids().nth(i).unwrap();
            if components.store.name(id) != name || components.store.value(id).shape() != shape.as_slice() {
                return Err(corrupt(format!("parameter {i} is {name} {shape:?}")));
            }
            *components.store.value_mut(id) = take(shape)?;
        }
        let mut adam = Adam::new(&components.store, header.adam.lr);
        adam.beta1 = header.adam.beta1;
        adam.beta2 = header.adam.beta2;
        adam.eps = header.adam.eps;
        adam.step = header.adam.step;
        for buf in [&mut adam.m, &mut adam.v] {
            for (t, (_, shape)) in buf.iter_mut().zip(&header.params) {
                *t = take(shape)?;
            }
        }
        if !payload.is_empty() {
            return Err(corrupt("trailing payload bytes"));
        }
        Ok(Checkpoint {
            components,
            adam,
            step: header.step,
            run: header.run,
            history: header.history,
        })
    }

    pub fn load(path: &Path, expected: Option<&str>, allow_mismatch: bool) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|e| CheckpointError::Io {
            path: path.into(),
            source: e,
        })?;
        Self::from_bytes(&bytes, expected, allow_mismatch)
    }
}
