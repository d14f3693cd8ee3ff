//! Layer-by-layer parameter tally for a D=2 toy model.
use emp_core::model::{DecoderKind, FocalMemory, ModelConfig, ScoreHead};

pub fn toy(decoder: DecoderKind) -> ModelConfig {
    ModelConfig {
        d_model: 2,
        heads: 1,
        agent_depth: 1,
        scene_depth: 1,
        decoder_depth: 1,
        modes: 1,
        t_h: 3,
        t_f: 2,
        lane_points: 4,
        agent_types: 4,
        lane_types: 3,
        decoder,
        ffn_mult: 4,
        score_head: ScoreHead::Pooled,
        focal_memory: FocalMemory::Sequence,
        layer_norm_eps: 1e-5,
    }
}

/// D = 2, FFN width 8, K = 1, T_f = 2.
pub fn hand_count(decoder: DecoderKind) -> usize {
    let linear = |i: usize, o: usize| i * o + o;
    let norm = 2 * 2;
    let attn = 4 * linear(2, 2); // 24
    let ffn = linear(2, 8) + linear(8, 2); // 24 + 18
    let block = norm + attn + norm + ffn; // 74
    let agent = linear(5, 2) + block + norm + 4 * 2; // 12 + 74 + 4 + 8 = 98
    let lane = linear(3, 2) + norm + 3 * linear(2, 2) + 3 * 2; // 8 + 4 + 18 + 6 = 36
    let scene = linear(4, 2) + linear(2, 2) + block + norm; // 10 + 6 + 74 + 4 = 94
    // mode embedding, trajectory MLP, score MLP, auxiliary head = 63
    let heads = 2 + linear(2, 4) + linear(4, 4) + linear(2, 4) + linear(4, 1) + linear(2, 4);
    let mlp = agent + lane + scene + heads;
    match decoder {
        DecoderKind::Mlp => mlp,
        // self-attention, cross-attention, FFN, each pre-normed, plus the output norm
        DecoderKind::Detr => mlp + (norm + attn + norm + attn + norm + ffn) + norm,
    }
}
