//! Checkpoint files: one JSON header line (format, config, seed, init
//! scheme, tensor index) followed by raw little-endian `f32` tensors in
//! lexicographic path order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::{ParameterStore, EMBEDDING_INIT_STD};
use crate::error::{EmpError, Result};
use crate::tensor::{Scalar, Tensor};

pub const CHECKPOINT_FORMAT: &str = "emp-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitScheme {
    pub linear_weight: String,
    pub linear_bias: String,
    pub embedding: String,
    pub norm: String,
}

impl Default for InitScheme {
    fn default() -> Self {
        Self {
            linear_weight: "uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))".into(),
            linear_bias: "zeros".into(),
            embedding: format!("normal(0, {EMBEDDING_INIT_STD})"),
            norm: "gain ones, bias zeros".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub config: ModelConfig,
    pub seed: u64,
    pub init: InitScheme,
    /// Training hyperparameters, when the checkpoint comes from a run.
    #[serde(default)]
    pub train: Option<serde_json::Value>,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint<T: Scalar>(
    params: &ParameterStore<T>,
    config: &ModelConfig,
    seed: u64,
    train: Option<serde_json::Value>,
) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        config: config.clone(),
        seed,
        init: InitScheme::default(),
        train,
        tensors: params
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    for (_, t) in params.iter() {
        for &x in t.data() {
            out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ParameterStore<f32>, CheckpointHeader)> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| EmpError::Checkpoint("missing header line".into()))?;
    let value: serde_json::Value = serde_json::from_slice(&bytes[..nl])?;
    let format = value.get("format").and_then(|f| f.as_str()).unwrap_or_default();
    if format != CHECKPOINT_FORMAT {
        return Err(EmpError::Schema {
            found: format.to_string(),
            expected: CHECKPOINT_FORMAT.to_string(),
        });
    }
    let header: CheckpointHeader = serde_json::from_value(value)?;
    header.config.validate()?;
    let mut body = &bytes[nl + 1..];
    let mut tensors = BTreeMap::new();
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        if body.len() < 4 * n {
            return Err(EmpError::Checkpoint(format!("truncated tensor `{}`", entry.name)));
        }
        let data = body[..4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        body = &body[4 * n..];
        tensors.insert(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?);
    }
    if !body.is_empty() {
        return Err(EmpError::Checkpoint(format!("{} trailing bytes", body.len())));
    }
    let params = ParameterStore::from_tensors(&header.config, tensors)?;
    Ok((params, header))
}

pub fn save_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    params: &ParameterStore<T>,
    config: &ModelConfig,
    seed: u64,
    train: Option<serde_json::Value>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(params, config, seed, train)?;
    fs::write(path, bytes).map_err(|e| EmpError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ParameterStore<f32>, CheckpointHeader)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| EmpError::io(path, e))?;
    decode_checkpoint(&bytes)
}
