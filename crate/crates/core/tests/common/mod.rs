//! Helpers shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

pub mod gradcheck;
pub mod invariance;
pub mod ledger;
pub mod oracle;

use emp_core::model::{DecoderKind, ModelConfig, MultiModalPrediction};
use emp_core::scenario::{generate_synthetic, preprocess, PreprocessConfig, PreprocessedScene, Profile, SyntheticSpec};

pub const TOY_T_H: usize = 10;
pub const TOY_T_F: usize = 12;

/// D=16, two heads, one block per stage, K=6.
pub fn toy_model(decoder: DecoderKind) -> ModelConfig {
    let mut c = ModelConfig::new(decoder, Profile::Av2)
        .with_width(16)
        .with_horizons(TOY_T_H, TOY_T_F);
    c.heads = 2;
    c.agent_depth = 1;
    c.scene_depth = 1;
    c.decoder_depth = 1;
    c
}

pub fn toy_spec() -> SyntheticSpec {
    let mut s = SyntheticSpec::for_profile(Profile::Av2);
    s.t_h = TOY_T_H;
    s.t_f = TOY_T_F;
    s.agents = (2, 4);
    s.lanes = (1, 4);
    s
}

pub fn scenes(seed: u64, count: usize, spec: &SyntheticSpec) -> Vec<PreprocessedScene> {
    generate_synthetic(seed, count, spec)
        .iter()
        .map(|s| preprocess(s, &PreprocessConfig::default()).expect("synthetic scenes preprocess"))
        .collect()
}

pub fn toy_scene(seed: u64) -> PreprocessedScene {
    scenes(seed, 1, &toy_spec()).remove(0)
}

/// Scores followed by every trajectory coordinate.
pub fn flatten(p: &MultiModalPrediction) -> Vec<f64> {
    p.scores
        .iter()
        .copied()
        .chain(p.trajectories.iter().flatten().flatten().copied())
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "compared buffers differ in length");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn prediction_diff(a: &MultiModalPrediction, b: &MultiModalPrediction) -> f64 {
    max_abs_diff(&flatten(a), &flatten(b))
}
