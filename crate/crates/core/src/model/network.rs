//! Forward pass: agent encoder, lane encoder, positional embedding, scene
//! encoder and the two decoder variants.

use super::batch::SceneBatch;
use super::config::{DecoderKind, FocalMemory, ModelConfig, ScoreHead};
use super::params::ParameterStore;
use crate::error::{EmpError, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Output of [`Emp::encode_agents`].
#[derive(Debug, Clone, Copy)]
pub struct AgentEncoding {
    /// `A × D` pooled tokens with type embeddings.
    pub tokens: Var,
    /// `A·T_h × D` per-step embeddings before pooling.
    pub sequence: Var,
}

/// Decoder heads before normalization of the scores.
#[derive(Debug, Clone, Copy)]
pub struct Decoded {
    /// `B·K × 2·T_f`
    pub trajectories: Var,
    /// `B × K`
    pub logits: Var,
}

/// Every node a training step or a prediction needs.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    pub trajectories: Var,
    pub logits: Var,
    /// `B × K` softmax of `logits`.
    pub scores: Var,
    /// Encoder agent tokens, `A_total × D`.
    pub agent_tokens: Var,
    /// Single-trajectory auxiliary predictions, `A_total × 2·T_f`.
    pub aux: Var,
}

/// Lane keys for the query decoder.
pub struct LaneMemory<'m> {
    /// `B·L_max × D`
    pub tokens: Var,
    pub mask: &'m [bool],
    pub has_lanes: &'m [bool],
}

/// The network bound to one parameter store.
pub struct Emp<'p, T: Scalar> {
    cfg: &'p ModelConfig,
    params: &'p ParameterStore<T>,
}

impl<'p, T: Scalar> Emp<'p, T> {
    pub fn new(cfg: &'p ModelConfig, params: &'p ParameterStore<T>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &ModelConfig {
        self.cfg
    }

    fn p(&self, g: &mut Graph<'p, T>, name: &str) -> Result<Var> {
        Ok(g.param(name, self.params.get(name)?))
    }

    fn linear(&self, g: &mut Graph<'p, T>, x: Var, prefix: &str) -> Result<Var> {
        let w = self.p(g, &format!("{prefix}.weight"))?;
        let b = self.p(g, &format!("{prefix}.bias"))?;
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }

    fn norm(&self, g: &mut Graph<'p, T>, x: Var, prefix: &str) -> Result<Var> {
        let gain = self.p(g, &format!("{prefix}.gain"))?;
        let bias = self.p(g, &format!("{prefix}.bias"))?;
        g.layer_norm(x, gain, bias, self.cfg.layer_norm_eps)
    }

    fn embed(&self, g: &mut Graph<'p, T>, table: &str, ids: &[usize]) -> Result<Var> {
        let t = self.p(g, table)?;
        g.gather_rows(t, ids.iter().map(|&i| Some(i)).collect())
    }

    /// Projected multi-head attention of `queries` over `keys` (also used
    /// as values), grouped into `groups` independent problems.
    pub fn attention(
        &self,
        g: &mut Graph<'p, T>,
        queries: Var,
        keys: Var,
        groups: usize,
        key_mask: &[bool],
        prefix: &str,
    ) -> Result<Var> {
        let q = self.linear(g, queries, &format!("{prefix}.q"))?;
        let k = self.linear(g, keys, &format!("{prefix}.k"))?;
        let v = self.linear(g, keys, &format!("{prefix}.v"))?;
        let a = g.attention(q, k, v, groups, self.cfg.heads, key_mask)?;
        self.linear(g, a, &format!("{prefix}.o"))
    }

    fn ffn(&self, g: &mut Graph<'p, T>, x: Var, prefix: &str) -> Result<Var> {
        let h = self.linear(g, x, &format!("{prefix}.fc1"))?;
        let h = g.gelu(h);
        self.linear(g, h, &format!("{prefix}.fc2"))
    }

    /// Pre-norm self-attention block with residual connections.
    fn self_block(&self, g: &mut Graph<'p, T>, x: Var, groups: usize, mask: &[bool], prefix: &str) -> Result<Var> {
        let h = self.norm(g, x, &format!("{prefix}.norm1"))?;
        let a = self.attention(g, h, h, groups, mask, &format!("{prefix}.attn"))?;
        let x = g.add(x, a)?;
        let h = self.norm(g, x, &format!("{prefix}.norm2"))?;
        let f = self.ffn(g, h, &format!("{prefix}.ffn"))?;
        g.add(x, f)
    }

    fn mlp2(&self, g: &mut Graph<'p, T>, x: Var, prefix: &str) -> Result<Var> {
        let h = self.linear(g, x, &format!("{prefix}.fc1"))?;
        let h = g.relu(h);
        self.linear(g, h, &format!("{prefix}.fc2"))
    }

    /// Temporal self-attention per agent, masked max-pool over observed
    /// steps, plus type embeddings. `features` is `A·T_h × 5`.
    pub fn encode_agents(
        &self,
        g: &mut Graph<'p, T>,
        features: Var,
        step_mask: &[bool],
        type_ids: &[usize],
    ) -> Result<AgentEncoding> {
        let agents = type_ids.len();
        if agents == 0 || step_mask.len() != agents * self.cfg.t_h {
            return Err(EmpError::shape("encode_agents", g.shape(features), &[agents, self.cfg.t_h]));
        }
        for (a, m) in step_mask.chunks(self.cfg.t_h).enumerate() {
            if !m.iter().any(|&b| b) {
                return Err(EmpError::InvalidMask(format!("agent {a} has no observed step")));
            }
        }
        let mut x = self.linear(g, features, "agent_encoder.input")?;
        for i in 0..self.cfg.agent_depth {
            x = self.self_block(g, x, agents, step_mask, &format!("agent_encoder.blocks.{i}"))?;
        }
        let sequence = self.norm(g, x, "agent_encoder.norm")?;
        let pooled = g.masked_max_pool(sequence, agents, step_mask)?;
        let types = self.embed(g, "agent_encoder.type_embedding", type_ids)?;
        let tokens = g.add(pooled, types)?;
        Ok(AgentEncoding { tokens, sequence })
    }

    /// Shared per-point MLP, max-pool over the points of each segment, a
    /// per-segment MLP, plus type embeddings. `features` is `L·N × 3`.
    pub fn encode_lanes(
        &self,
        g: &mut Graph<'p, T>,
        features: Var,
        point_mask: &[bool],
        type_ids: &[usize],
    ) -> Result<Var> {
        let lanes = type_ids.len();
        let h = self.linear(g, features, "lane_encoder.point_fc1")?;
        let h = self.norm(g, h, "lane_encoder.point_norm")?;
        let h = g.relu(h);
        let h = self.linear(g, h, "lane_encoder.point_fc2")?;
        let pooled = g.masked_max_pool(h, lanes, point_mask)?;
        let s = self.linear(g, pooled, "lane_encoder.segment_fc1")?;
        let s = g.relu(s);
        let s = self.linear(g, s, "lane_encoder.segment_fc2")?;
        let types = self.embed(g, "lane_encoder.type_embedding", type_ids)?;
        g.add(s, types)
    }

    /// Two linear layers (GeLU after the first) on `[x, y, cos α, sin α]`.
    pub fn positional_embedding(&self, g: &mut Graph<'p, T>, centers: &Tensor<f64>) -> Result<Var> {
        if centers.cols() != 4 {
            return Err(EmpError::shape("positional_embedding", centers.shape(), &[4]));
        }
        for (i, row) in centers.data().chunks(4).enumerate() {
            let n = row[2] * row[2] + row[3] * row[3];
            if (n - 1.0).abs() > 1e-6 {
                return Err(EmpError::Contract(format!(
                    "center {i} has a non-unit direction (cos²+sin² = {n})"
                )));
            }
        }
        let c = g.constant(centers.cast());
        let h = self.linear(g, c, "scene_encoder.pos_fc1")?;
        let h = g.gelu(h);
        self.linear(g, h, "scene_encoder.pos_fc2")
    }

    /// Scene encoder over `groups` padded scenes. `slot_index` selects rows
    /// of `tokens` (`None` = padding); `mask` marks real entities.
    pub fn encode_scene_slots(
        &self,
        g: &mut Graph<'p, T>,
        tokens: Var,
        slot_index: Vec<Option<usize>>,
        centers: &Tensor<f64>,
        mask: &[bool],
        groups: usize,
    ) -> Result<Var> {
        let slots = g.gather_rows(tokens, slot_index)?;
        let pos = self.positional_embedding(g, centers)?;
        let mut x = g.add(slots, pos)?;
        for i in 0..self.cfg.scene_depth {
            x = self.self_block(g, x, groups, mask, &format!("scene_encoder.blocks.{i}"))?;
        }
        self.norm(g, x, "scene_encoder.norm")
    }

    /// Single-scene scene encoding of agents followed by lanes.
    pub fn encode_scene(
        &self,
        g: &mut Graph<'p, T>,
        agent_tokens: Var,
        lane_tokens: Option<Var>,
        centers: &Tensor<f64>,
        entity_mask: &[bool],
    ) -> Result<Var> {
        let tokens = match lane_tokens {
            Some(l) => g.concat_rows(agent_tokens, l)?,
            None => agent_tokens,
        };
        let rows = g.shape(tokens)[0];
        if entity_mask.len() != rows || centers.rows() != rows {
            return Err(EmpError::shape("encode_scene", &[rows], &[entity_mask.len(), centers.rows()]));
        }
        self.encode_scene_slots(g, tokens, (0..rows).map(Some).collect(), centers, entity_mask, 1)
    }

    fn mode_rows(&self, batch: usize) -> Vec<Option<usize>> {
        (0..batch * self.cfg.modes)
            .map(|i| Some(i % self.cfg.modes))
            .collect()
    }

    fn heads(&self, g: &mut Graph<'p, T>, modes: Var, focal: Var, batch: usize) -> Result<Decoded> {
        let trajectories = self.mlp2(g, modes, "decoder.traj")?;
        let logits = match self.cfg.score_head {
            ScoreHead::Pooled => self.mlp2(g, focal, "decoder.score")?,
            ScoreHead::PerMode => {
                let s = self.mlp2(g, modes, "decoder.score")?;
                g.reshape(s, vec![batch, self.cfg.modes])?
            }
        };
        Ok(Decoded { trajectories, logits })
    }

    /// MLP decoder: broadcast the focal token to `K` rows, add mode
    /// embeddings, then the trajectory and score heads. `focal` is `B × D`.
    pub fn decode_mlp(&self, g: &mut Graph<'p, T>, focal: Var) -> Result<Decoded> {
        let batch = g.shape(focal)[0];
        let k = self.cfg.modes;
        let broadcast = g.gather_rows(focal, (0..batch * k).map(|i| Some(i / k)).collect())?;
        let table = self.p(g, "decoder.mode_embedding")?;
        let modes = g.gather_rows(table, self.mode_rows(batch))?;
        let modes = g.add(broadcast, modes)?;
        self.heads(g, modes, focal, batch)
    }

    /// Query decoder: learnable queries, each block cross-attending to the
    /// focal memory, then to lane tokens, then a feed-forward pass.
    ///
    /// `focal_memory` is `B·M × D` with mask `focal_mask`; `focal` is the
    /// `B × D` focal scene token used by the pooled score head.
    pub fn decode_detr(
        &self,
        g: &mut Graph<'p, T>,
        focal_memory: Var,
        focal_mask: &[bool],
        lanes: Option<LaneMemory<'_>>,
        focal: Var,
    ) -> Result<Decoded> {
        let batch = g.shape(focal)[0];
        let k = self.cfg.modes;
        let d = self.cfg.d_model;
        let table = self.p(g, "decoder.mode_embedding")?;
        let mut q = g.gather_rows(table, self.mode_rows(batch))?;

        // scenes without lanes attend to a dummy key whose update is zeroed
        let lane_inputs = match &lanes {
            Some(l) if l.has_lanes.iter().any(|&h| h) => {
                let per = l.mask.len() / batch;
                let mut mask = l.mask.to_vec();
                let mut gate = Vec::with_capacity(batch * k * d);
                for (b, &has) in l.has_lanes.iter().enumerate() {
                    if !has {
                        mask[b * per] = true;
                    }
                    let v = if has { 1.0 } else { 0.0 };
                    gate.extend(std::iter::repeat_n(T::of(v), k * d));
                }
                let gate = if l.has_lanes.iter().all(|&h| h) {
                    None
                } else {
                    Some(g.constant(Tensor::new(vec![batch * k, d], gate)?))
                };
                Some((l.tokens, mask, gate))
            }
            _ => None,
        };

        for i in 0..self.cfg.decoder_depth {
            let p = format!("decoder.blocks.{i}");
            let h = self.norm(g, q, &format!("{p}.focal_norm"))?;
            let a = self.attention(g, h, focal_memory, batch, focal_mask, &format!("{p}.focal_attn"))?;
            q = g.add(q, a)?;
            if let Some((tokens, mask, gate)) = &lane_inputs {
                let h = self.norm(g, q, &format!("{p}.lane_norm"))?;
                let mut a = self.attention(g, h, *tokens, batch, mask, &format!("{p}.lane_attn"))?;
                if let Some(gate) = gate {
                    a = g.mul(a, *gate)?;
                }
                q = g.add(q, a)?;
            }
            let h = self.norm(g, q, &format!("{p}.ffn_norm"))?;
            let f = self.ffn(g, h, &format!("{p}.ffn"))?;
            q = g.add(q, f)?;
        }
        let q = self.norm(g, q, "decoder.norm")?;
        self.heads(g, q, focal, batch)
    }

    /// Full forward pass over a packed batch.
    pub fn forward(&self, g: &mut Graph<'p, T>, batch: &SceneBatch) -> Result<ForwardOutput> {
        let cfg = self.cfg;
        let features = g.constant(batch.agent_features.cast());
        let agents = self.encode_agents(g, features, &batch.agent_step_mask, &batch.agent_type_ids)?;
        let tokens = if batch.lane_count() > 0 {
            let lf = g.constant(batch.lane_features.cast());
            let lanes = self.encode_lanes(g, lf, &batch.lane_point_mask, &batch.lane_type_ids)?;
            g.concat_rows(agents.tokens, lanes)?
        } else {
            agents.tokens
        };
        let scene = self.encode_scene_slots(
            g,
            tokens,
            batch.slot_index.clone(),
            &batch.slot_centers,
            &batch.slot_mask,
            batch.scenes,
        )?;
        let focal = g.gather_rows(scene, batch.focal_slots.iter().map(|&i| Some(i)).collect())?;

        let decoded = match cfg.decoder {
            DecoderKind::Mlp => self.decode_mlp(g, focal)?,
            DecoderKind::Detr => {
                let (memory, mask) = self.focal_memory(g, &agents, scene, batch)?;
                let lane_tokens = if batch.lanes_per_scene > 0 {
                    Some(g.gather_rows(scene, batch.lane_slot_index.clone())?)
                } else {
                    None
                };
                let lanes = lane_tokens.map(|tokens| LaneMemory {
                    tokens,
                    mask: &batch.lane_slot_mask,
                    has_lanes: &batch.scene_has_lanes,
                });
                self.decode_detr(g, memory, &mask, lanes, focal)?
            }
        };
        let scores = g.softmax(decoded.logits)?;
        let agent_rows = g.gather_rows(scene, batch.agent_slots.iter().map(|&i| Some(i)).collect())?;
        let aux = self.linear(g, agent_rows, "aux_head")?;
        Ok(ForwardOutput {
            trajectories: decoded.trajectories,
            logits: decoded.logits,
            scores,
            agent_tokens: agent_rows,
            aux,
        })
    }

    fn focal_memory(
        &self,
        g: &mut Graph<'p, T>,
        agents: &AgentEncoding,
        scene: Var,
        batch: &SceneBatch,
    ) -> Result<(Var, Vec<bool>)> {
        match self.cfg.focal_memory {
            FocalMemory::Token => {
                let rows = batch.focal_slots.iter().map(|&i| Some(i)).collect();
                Ok((g.gather_rows(scene, rows)?, vec![true; batch.scenes]))
            }
            FocalMemory::Sequence => {
                let t_h = self.cfg.t_h;
                let seq_rows = g.shape(agents.sequence)[0];
                let both = g.concat_rows(agents.sequence, scene)?;
                let mut rows = Vec::with_capacity(batch.scenes * (t_h + 1));
                let mut mask = Vec::with_capacity(batch.scenes * (t_h + 1));
                for (&a, &slot) in batch.focal_agents.iter().zip(&batch.focal_slots) {
                    for t in 0..t_h {
                        rows.push(Some(a * t_h + t));
                        mask.push(batch.agent_step_mask[a * t_h + t]);
                    }
                    rows.push(Some(seq_rows + slot));
                    mask.push(true);
                }
                Ok((g.gather_rows(both, rows)?, mask))
            }
        }
    }
}
