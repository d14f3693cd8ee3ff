//! Paired-run invariance trials. Each returns the largest deviation seen.

use emp_core::model::{predict, predict_batch, DecoderKind, Emp, ModelConfig, ParameterStore};
use emp_core::rng;
use emp_core::scenario::{generate_synthetic, preprocess, PreprocessConfig, PreprocessedScene, RigidTransform, AGENT_FEATURES, LANE_FEATURES};
use emp_core::{Graph, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

use super::{max_abs_diff, prediction_diff, toy_model, toy_spec};

const STREAM: u64 = 77;

pub fn params(cfg: &ModelConfig, seed: u64) -> ParameterStore<f64> {
    ParameterStore::init(cfg, seed)
}

/// Reorders agents and lanes of a preprocessed scene.
pub fn permute_scene(s: &PreprocessedScene, agents: &[usize], lanes: &[usize]) -> PreprocessedScene {
    let (t_h, t_f, n) = (s.t_h, s.t_f, s.lane_points);
    let rows = |data: &[f64], width: usize, order: &[usize]| -> Vec<f64> {
        order.iter().flat_map(|&i| data[i * width..(i + 1) * width].to_vec()).collect()
    };
    let mut p = s.clone();
    p.agent_features = rows(&s.agent_features, t_h * AGENT_FEATURES, agents);
    p.agent_step_mask = agents.iter().flat_map(|&i| s.agent_step_mask[i * t_h..(i + 1) * t_h].to_vec()).collect();
    p.agent_centers = agents.iter().map(|&i| s.agent_centers[i]).collect();
    p.agent_type_ids = agents.iter().map(|&i| s.agent_type_ids[i]).collect();
    p.agent_ids = agents.iter().map(|&i| s.agent_ids[i].clone()).collect();
    p.focal_index = agents.iter().position(|&i| i == s.focal_index).unwrap();
    p.agent_future_targets = agents
        .iter()
        .flat_map(|&i| s.agent_future_targets[i * t_f..(i + 1) * t_f].to_vec())
        .collect();
    p.agent_future_mask = agents.iter().flat_map(|&i| s.agent_future_mask[i * t_f..(i + 1) * t_f].to_vec()).collect();
    p.lane_features = rows(&s.lane_features, n * LANE_FEATURES, lanes);
    p.lane_centers = lanes.iter().map(|&i| s.lane_centers[i]).collect();
    p.lane_type_ids = lanes.iter().map(|&i| s.lane_type_ids[i]).collect();
    p
}

fn setup(seed: u64, decoder: DecoderKind) -> (ModelConfig, ParameterStore<f64>, PreprocessedScene, rng::Rng) {
    let cfg = toy_model(decoder);
    let p = params(&cfg, seed);
    let scene = super::toy_scene(seed);
    (cfg, p, scene, rng::stream(seed, STREAM))
}

/// Shuffles the N points of every lane segment.
pub fn lane_point_permutation(seed: u64, decoder: DecoderKind) -> f64 {
    let (cfg, p, scene, mut r) = setup(seed, decoder);
    let mut shuffled = scene.clone();
    let n = scene.lane_points;
    for l in 0..scene.lane_count() {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut r);
        let seg = &scene.lane_features[l * n * LANE_FEATURES..(l + 1) * n * LANE_FEATURES];
        let new: Vec<f64> = order.iter().flat_map(|&i| seg[i * LANE_FEATURES..(i + 1) * LANE_FEATURES].to_vec()).collect();
        shuffled.lane_features[l * n * LANE_FEATURES..(l + 1) * n * LANE_FEATURES].copy_from_slice(&new);
    }
    let a = predict(&scene, &p, &cfg).unwrap();
    let b = predict(&shuffled, &p, &cfg).unwrap();
    prediction_diff(&a, &b)
}

/// Encodes one scene's entities and returns `(agent tokens, lane tokens,
/// centers)` values for the scene encoder.
fn entity_inputs(
    net: &Emp<'_, f64>,
    scene: &PreprocessedScene,
) -> (Tensor<f64>, Tensor<f64>, Vec<[f64; 4]>) {
    let mut g = Graph::inference();
    let a = scene.agent_count();
    let f = g.constant(Tensor::new(vec![a * scene.t_h, AGENT_FEATURES], scene.agent_features.clone()).unwrap());
    let agents = net.encode_agents(&mut g, f, &scene.agent_step_mask, &scene.agent_type_ids).unwrap();
    let l = scene.lane_count();
    let lf = g.constant(Tensor::new(vec![l * scene.lane_points, LANE_FEATURES], scene.lane_features.clone()).unwrap());
    let lanes = net
        .encode_lanes(&mut g, lf, &vec![true; l * scene.lane_points], &scene.lane_type_ids)
        .unwrap();
    let focal = scene.focal_center();
    let centers = scene
        .agent_centers
        .iter()
        .chain(&scene.lane_centers)
        .map(|c| emp_core::model::relative_center(c, &focal))
        .collect();
    (g.tensor(agents.tokens), g.tensor(lanes), centers)
}

fn run_scene_encoder(net: &Emp<'_, f64>, tokens: &Tensor<f64>, centers: &[[f64; 4]], mask: &[bool]) -> Vec<f64> {
    let mut g = Graph::inference();
    let t = g.constant(tokens.clone());
    let c = Tensor::new(vec![centers.len(), 4], centers.iter().flatten().copied().collect()).unwrap();
    let out = net.encode_scene(&mut g, t, None, &c, mask).unwrap();
    g.value(out).to_vec()
}

fn stack(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let mut d = a.data().to_vec();
    d.extend_from_slice(b.data());
    Tensor::new(vec![a.rows() + b.rows(), a.cols()], d).unwrap()
}

/// Joint permutation of scene entities permutes the scene encoder output,
/// and reordering agents and lanes leaves the prediction unchanged.
pub fn entity_permutation(seed: u64, decoder: DecoderKind) -> f64 {
    let (cfg, p, scene, mut r) = setup(seed, decoder);
    let net = Emp::new(&cfg, &p).unwrap();
    let (agents, lanes, centers) = entity_inputs(&net, &scene);
    let tokens = stack(&agents, &lanes);
    let n = tokens.rows();
    let d = tokens.cols();
    let mask = vec![true; n];
    let base = run_scene_encoder(&net, &tokens, &centers, &mask);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut r);
    let pt = Tensor::new(vec![n, d], perm.iter().flat_map(|&i| tokens.data()[i * d..(i + 1) * d].to_vec()).collect()).unwrap();
    let pc: Vec<[f64; 4]> = perm.iter().map(|&i| centers[i]).collect();
    let out = run_scene_encoder(&net, &pt, &pc, &mask);
    let expected: Vec<f64> = perm.iter().flat_map(|&i| base[i * d..(i + 1) * d].to_vec()).collect();
    let mut worst = max_abs_diff(&out, &expected);

    let mut ap: Vec<usize> = (0..scene.agent_count()).collect();
    ap.shuffle(&mut r);
    let mut lp: Vec<usize> = (0..scene.lane_count()).collect();
    lp.shuffle(&mut r);
    let a = predict(&scene, &p, &cfg).unwrap();
    let b = predict(&permute_scene(&scene, &ap, &lp), &p, &cfg).unwrap();
    worst = worst.max(prediction_diff(&a, &b));
    worst
}

/// Masked padding entities leave real tokens unchanged, and batching a
/// scene next to a larger one leaves its prediction unchanged.
pub fn padding(seed: u64, decoder: DecoderKind) -> f64 {
    let (cfg, p, scene, mut r) = setup(seed, decoder);
    let net = Emp::new(&cfg, &p).unwrap();
    let (agents, lanes, mut centers) = entity_inputs(&net, &scene);
    let tokens = stack(&agents, &lanes);
    let (n, d) = (tokens.rows(), tokens.cols());
    let base = run_scene_encoder(&net, &tokens, &centers, &vec![true; n]);
    let extra = r.gen_range(1..4);
    let junk: Vec<f64> = (0..extra * d).map(|_| r.gen_range(-50.0..50.0)).collect();
    let padded = stack(&tokens, &Tensor::new(vec![extra, d], junk).unwrap());
    for _ in 0..extra {
        let a: f64 = r.gen_range(-3.0..3.0);
        centers.push([r.gen_range(-80.0..80.0), r.gen_range(-80.0..80.0), a.cos(), a.sin()]);
    }
    let mut mask = vec![true; n];
    mask.extend(vec![false; extra]);
    let out = run_scene_encoder(&net, &padded, &centers, &mask);
    let mut worst = max_abs_diff(&out[..n * d], &base);

    let mut big_spec = toy_spec();
    big_spec.agents = (scene.agent_count() + 1, scene.agent_count() + 3);
    big_spec.lanes = (scene.lane_count() + 1, scene.lane_count() + 3);
    let big = preprocess(&generate_synthetic(seed ^ 0xB16, 1, &big_spec)[0], &PreprocessConfig::default()).unwrap();
    let alone = predict(&scene, &p, &cfg).unwrap();
    let batched = predict_batch(&[&big, &scene], &p, &cfg).unwrap();
    worst = worst.max(prediction_diff(&alone, &batched[1]));
    worst
}

/// Garbage in masked history steps does not reach the prediction.
pub fn masked_steps(seed: u64, decoder: DecoderKind) -> f64 {
    let cfg = toy_model(decoder);
    let p = params(&cfg, seed);
    let mut spec = toy_spec();
    spec.dropout = 0.35;
    let scene = preprocess(&generate_synthetic(seed, 1, &spec)[0], &PreprocessConfig::default()).unwrap();
    let mut r = rng::stream(seed, STREAM);
    let mut noisy = scene.clone();
    for (i, &m) in scene.agent_step_mask.iter().enumerate() {
        if !m {
            for v in &mut noisy.agent_features[i * AGENT_FEATURES..(i + 1) * AGENT_FEATURES] {
                *v = r.gen_range(-100.0..100.0);
            }
        }
    }
    let a = predict(&scene, &p, &cfg).unwrap();
    let b = predict(&noisy, &p, &cfg).unwrap();
    prediction_diff(&a, &b)
}

/// Translating the whole world-frame scenario before preprocessing.
pub fn translation(seed: u64, decoder: DecoderKind) -> f64 {
    let cfg = toy_model(decoder);
    let p = params(&cfg, seed);
    let raw = generate_synthetic(seed, 1, &toy_spec()).remove(0);
    let mut r = rng::stream(seed, STREAM);
    let tf = RigidTransform::translation(r.gen_range(-2000.0..2000.0), r.gen_range(-2000.0..2000.0));
    let pc = PreprocessConfig::default();
    let a = predict(&preprocess(&raw, &pc).unwrap(), &p, &cfg).unwrap();
    let b = predict(&preprocess(&raw.transformed(&tf), &pc).unwrap(), &p, &cfg).unwrap();
    prediction_diff(&a, &b)
}
