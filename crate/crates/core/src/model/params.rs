//! Parameter layout and initialization.
//!
//! [`param_specs`] is the single source of truth for every learnable tensor:
//! the forward pass, the checkpoint format and [`param_count`] all read it.

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{DecoderKind, ModelConfig, ScoreHead};
use crate::error::{EmpError, Result};
use crate::rng::{self, streams};
use crate::tensor::{Scalar, Tensor};

/// Standard deviation of learnable embedding tables at init.
pub const EMBEDDING_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// `U(−1/√fan_in, 1/√fan_in)`
    Uniform { fan_in: usize },
    Normal { std: f64 },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

struct Specs(Vec<ParamSpec>);

impl Specs {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) {
        self.0.push(ParamSpec { name, shape, init });
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        self.push(format!("{prefix}.weight"), vec![fan_in, fan_out], Init::Uniform { fan_in });
        self.push(format!("{prefix}.bias"), vec![fan_out], Init::Zeros);
    }

    fn norm(&mut self, prefix: &str, d: usize) {
        self.push(format!("{prefix}.gain"), vec![d], Init::Ones);
        self.push(format!("{prefix}.bias"), vec![d], Init::Zeros);
    }

    fn embedding(&mut self, name: String, rows: usize, d: usize) {
        self.push(name, vec![rows, d], Init::Normal { std: EMBEDDING_INIT_STD });
    }

    fn attention(&mut self, prefix: &str, d: usize) {
        for p in ["q", "k", "v", "o"] {
            self.linear(&format!("{prefix}.{p}"), d, d);
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, hidden: usize) {
        self.linear(&format!("{prefix}.fc1"), d, hidden);
        self.linear(&format!("{prefix}.fc2"), hidden, d);
    }

    fn block(&mut self, prefix: &str, d: usize, hidden: usize) {
        self.norm(&format!("{prefix}.norm1"), d);
        self.attention(&format!("{prefix}.attn"), d);
        self.norm(&format!("{prefix}.norm2"), d);
        self.ffn(&format!("{prefix}.ffn"), d, hidden);
    }
}

/// Every learnable tensor of the configured network, in construction order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let d = cfg.d_model;
    let hidden = cfg.ffn_width();
    let mut s = Specs(Vec::new());

    s.linear("agent_encoder.input", 5, d);
    for i in 0..cfg.agent_depth {
        s.block(&format!("agent_encoder.blocks.{i}"), d, hidden);
    }
    s.norm("agent_encoder.norm", d);
    s.embedding("agent_encoder.type_embedding".into(), cfg.agent_types, d);

    s.linear("lane_encoder.point_fc1", 3, d);
    s.norm("lane_encoder.point_norm", d);
    s.linear("lane_encoder.point_fc2", d, d);
    s.linear("lane_encoder.segment_fc1", d, d);
    s.linear("lane_encoder.segment_fc2", d, d);
    s.embedding("lane_encoder.type_embedding".into(), cfg.lane_types, d);

    s.linear("scene_encoder.pos_fc1", 4, d);
    s.linear("scene_encoder.pos_fc2", d, d);
    for i in 0..cfg.scene_depth {
        s.block(&format!("scene_encoder.blocks.{i}"), d, hidden);
    }
    s.norm("scene_encoder.norm", d);

    s.embedding("decoder.mode_embedding".into(), cfg.modes, d);
    if cfg.decoder == DecoderKind::Detr {
        for i in 0..cfg.decoder_depth {
            let p = format!("decoder.blocks.{i}");
            s.norm(&format!("{p}.focal_norm"), d);
            s.attention(&format!("{p}.focal_attn"), d);
            s.norm(&format!("{p}.lane_norm"), d);
            s.attention(&format!("{p}.lane_attn"), d);
            s.norm(&format!("{p}.ffn_norm"), d);
            s.ffn(&format!("{p}.ffn"), d, hidden);
        }
        s.norm("decoder.norm", d);
    }
    s.linear("decoder.traj.fc1", d, 2 * d);
    s.linear("decoder.traj.fc2", 2 * d, 2 * cfg.t_f);
    s.linear("decoder.score.fc1", d, 2 * d);
    let score_out = match cfg.score_head {
        ScoreHead::Pooled => cfg.modes,
        ScoreHead::PerMode => 1,
    };
    s.linear("decoder.score.fc2", 2 * d, score_out);

    s.linear("aux_head", d, 2 * cfg.t_f);
    s.0
}

/// Exact number of learnable scalars.
pub fn param_count(cfg: &ModelConfig) -> usize {
    param_specs(cfg).iter().map(ParamSpec::numel).sum()
}

/// Named learnable tensors, ordered by path.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParameterStore<T> {
    /// Fresh parameters drawn from the seed's init stream.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut r = rng::stream(seed, streams::INIT);
        let mut tensors = BTreeMap::new();
        for spec in param_specs(cfg) {
            let n = spec.numel();
            let data: Vec<T> = match spec.init {
                Init::Uniform { fan_in } => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    (0..n).map(|_| T::of(r.gen_range(-bound..bound))).collect()
                }
                Init::Normal { std } => {
                    let dist = Normal::new(0.0, std).unwrap();
                    (0..n).map(|_| T::of(dist.sample(&mut r))).collect()
                }
                Init::Zeros => vec![T::zero(); n],
                Init::Ones => vec![T::one(); n],
            };
            tensors.insert(spec.name, Tensor::new(spec.shape, data).unwrap());
        }
        Self { tensors }
    }

    /// Wraps existing tensors after checking them against the layout.
    pub fn from_tensors(cfg: &ModelConfig, tensors: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        let specs = param_specs(cfg);
        for spec in &specs {
            match tensors.get(&spec.name) {
                None => {
                    return Err(EmpError::Checkpoint(format!("missing parameter `{}`", spec.name)))
                }
                Some(t) if t.shape() != spec.shape.as_slice() => {
                    return Err(EmpError::ParamShape {
                        path: spec.name.clone(),
                        found: t.shape().to_vec(),
                        expected: spec.shape.clone(),
                    })
                }
                Some(_) => {}
            }
        }
        if tensors.len() != specs.len() {
            let extra = tensors
                .keys()
                .find(|k| !specs.iter().any(|s| &s.name == *k))
                .cloned()
                .unwrap_or_default();
            return Err(EmpError::Checkpoint(format!("unexpected parameter `{extra}`")));
        }
        Ok(Self { tensors })
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| EmpError::Checkpoint(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParameterStore<U> {
        ParameterStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }
}
