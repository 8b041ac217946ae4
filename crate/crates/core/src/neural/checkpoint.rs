//! Checkpoint file: the 4 magic bytes `SCK1`, a little-endian `u32` manifest
//! length, the JSON manifest, then every tensor as little-endian `f64` in
//! manifest order (parameters, then Adam first and second moments if saved).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, LstmModel, ParamSet, TrainConfig, TENSOR_NAMES};
use crate::dataset::NormStats;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SCK1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub timesteps: usize,
    #[serde(default)]
    pub norm: Option<NormStats>,
    #[serde(default)]
    pub config: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: LstmModel,
    pub adam: Option<AdamState>,
    pub meta: CheckpointMeta,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    input_size: usize,
    hidden_sizes: (usize, usize),
    dropout_rate: f64,
    tensors: Vec<TensorEntry>,
    adam_state: bool,
    step: u64,
    meta: CheckpointMeta,
}

fn push_set(out: &mut Vec<u8>, set: &ParamSet) {
    for t in set.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn read_set(bytes: &mut &[u8], set: &mut ParamSet) -> Result<()> {
    for t in set.tensors_mut() {
        let need = t.len() * 8;
        if bytes.len() < need {
            return Err(Error::CorruptCheckpoint("tensor data truncated".into()));
        }
        let (head, rest) = bytes.split_at(need);
        for (v, chunk) in t.iter_mut().zip(head.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
        *bytes = rest;
    }
    Ok(())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let shape = self.model.shape();
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            input_size: shape.input,
            hidden_sizes: (shape.hidden1, shape.hidden2),
            dropout_rate: self.model.dropout_rate,
            tensors: TENSOR_NAMES
                .iter()
                .zip(self.model.params.shapes())
                .map(|(n, s)| TensorEntry {
                    name: n.to_string(),
                    shape: s,
                })
                .collect(),
            adam_state: self.adam.is_some(),
            step: self.adam.as_ref().map_or(0, |a| a.step),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(8 + json.len() + self.model.params.len() * 24);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        push_set(&mut out, &self.model.params);
        if let Some(a) = &self.adam {
            push_set(&mut out, &a.m);
            push_set(&mut out, &a.v);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let n = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let body = &bytes[8..];
        if body.len() < n {
            return Err(corrupt("manifest truncated"));
        }
        let manifest: Manifest = serde_json::from_slice(&body[..n])
            .map_err(|e| Error::CorruptCheckpoint(format!("manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(corrupt("unsupported format version"));
        }
        let (h1, h2) = manifest.hidden_sizes;
        let mut params = ParamSet::zeros(manifest.input_size, h1, h2);
        let listed: Vec<(&str, &[usize])> = manifest
            .tensors
            .iter()
            .map(|t| (t.name.as_str(), t.shape.as_slice()))
            .collect();
        let shapes = params.shapes();
        let expected: Vec<(&str, &[usize])> = TENSOR_NAMES
            .iter()
            .copied()
            .zip(shapes.iter().map(Vec::as_slice))
            .collect();
        if listed != expected {
            return Err(corrupt("tensor list does not match the declared layer sizes"));
        }
        let mut data = &body[n..];
        read_set(&mut data, &mut params)?;
        let adam = if manifest.adam_state {
            let mut m = params.zeros_like();
            let mut v = params.zeros_like();
            read_set(&mut data, &mut m)?;
            read_set(&mut data, &mut v)?;
            Some(AdamState {
                m,
                v,
                step: manifest.step,
            })
        } else {
            None
        };
        if !data.is_empty() {
            return Err(corrupt("trailing bytes after tensor data"));
        }
        if !(0.0..1.0).contains(&manifest.dropout_rate) {
            return Err(corrupt("dropout rate out of range"));
        }
        Ok(Checkpoint {
            model: LstmModel {
                params,
                dropout_rate: manifest.dropout_rate,
            },
            adam,
            meta: manifest.meta,
        })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
