use serde::{Deserialize, Serialize};

use crate::error::{EmpError, Result};
use crate::scenario::{AgentType, LaneType, Profile, LANE_POINTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    /// Mode embeddings + two MLP heads (EMP-M).
    Mlp,
    /// Learnable queries refined by cross-attention blocks (EMP-D).
    Detr,
}

/// Where the confidence logits come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreHead {
    /// One `D → 2D → K` MLP on the focal scene token.
    Pooled,
    /// One `D → 2D → 1` MLP applied to every mode token.
    PerMode,
}

/// Key set of the query decoder's focal cross-attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FocalMemory {
    /// Per-step focal history embeddings plus the focal scene token.
    Sequence,
    /// The focal scene token alone.
    Token,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub agent_depth: usize,
    pub scene_depth: usize,
    pub decoder_depth: usize,
    pub modes: usize,
    pub t_h: usize,
    pub t_f: usize,
    pub lane_points: usize,
    pub agent_types: usize,
    pub lane_types: usize,
    pub decoder: DecoderKind,
    pub ffn_mult: usize,
    pub score_head: ScoreHead,
    pub focal_memory: FocalMemory,
    pub layer_norm_eps: f64,
}

impl ModelConfig {
    pub fn new(decoder: DecoderKind, profile: Profile) -> Self {
        let (t_h, t_f) = profile.horizons().unwrap_or((50, 60));
        Self {
            d_model: 128,
            heads: 8,
            agent_depth: 4,
            scene_depth: 4,
            decoder_depth: 3,
            modes: 6,
            t_h,
            t_f,
            lane_points: LANE_POINTS,
            agent_types: AgentType::COUNT,
            lane_types: LaneType::COUNT,
            decoder,
            ffn_mult: 4,
            score_head: ScoreHead::Pooled,
            focal_memory: FocalMemory::Sequence,
            layer_norm_eps: 1e-5,
        }
    }

    pub fn emp_m(profile: Profile) -> Self {
        Self::new(DecoderKind::Mlp, profile)
    }

    pub fn emp_d(profile: Profile) -> Self {
        Self::new(DecoderKind::Detr, profile)
    }

    pub fn with_width(mut self, d_model: usize) -> Self {
        self.d_model = d_model;
        self
    }

    pub fn with_horizons(mut self, t_h: usize, t_f: usize) -> Self {
        self.t_h = t_h;
        self.t_f = t_f;
        self
    }

    pub fn variant_name(&self) -> &'static str {
        match self.decoder {
            DecoderKind::Mlp => "emp-m",
            DecoderKind::Detr => "emp-d",
        }
    }

    pub fn ffn_width(&self) -> usize {
        self.ffn_mult * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EmpError::Config(m.to_string()));
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad("d_model must be a positive multiple of heads");
        }
        if self.modes == 0 {
            return bad("modes must be at least 1");
        }
        if self.agent_depth == 0 || self.scene_depth == 0 || self.decoder_depth == 0 {
            return bad("depths must be at least 1");
        }
        if self.t_h == 0 || self.t_f == 0 || self.lane_points < 2 {
            return bad("horizons must be positive and lanes need two points");
        }
        if self.agent_types == 0 || self.lane_types == 0 || self.ffn_mult == 0 {
            return bad("type counts and ffn_mult must be positive");
        }
        Ok(())
    }
}
