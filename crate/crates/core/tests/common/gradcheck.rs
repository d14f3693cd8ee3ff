//! Central finite differences against reverse-mode gradients, in `f64`.

use std::collections::BTreeMap;

use emp_core::model::{DecoderKind, Emp, ModelConfig, ParameterStore, SceneBatch};
use emp_core::rng;
use emp_core::scenario::{PreprocessedScene, SyntheticSpec};
use emp_core::training::batch_loss;
use emp_core::{Graph, Tensor, Var};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{scenes, toy_model, TOY_T_F, TOY_T_H};

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng::stream(seed, 99);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.sample(StandardNormal)).collect()).unwrap()
}

/// Max relative error between the analytic gradient of `Σ R ⊙ f(inputs)`
/// and central differences, over every input coordinate.
fn fd_error(inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Graph<'_, f64>, &[Var]) -> Var) -> f64 {
    let eval = |ins: &[Tensor<f64>], with_grad: bool| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|x| g.input(x.clone())).collect();
        let out = f(&mut g, &vars);
        let w = g.constant(randn(g.shape(out), 4242));
        let prod = g.mul(out, w).unwrap();
        let loss = g.sum(prod);
        let value = g.scalar_value(loss);
        let grads = with_grad.then(|| {
            let gr = g.backward(loss).unwrap();
            vars.iter()
                .map(|v| gr.get(*v).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; g.value(*v).len()]))
                .collect::<Vec<_>>()
        });
        (value, grads)
    };
    let analytic = eval(&inputs, true).1.unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        for j in 0..x.numel() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= h;
            let numeric = (eval(&plus, false).0 - eval(&minus, false).0) / (2.0 * h);
            let a = analytic[i][j];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
    }
    worst
}

/// Worst relative error per differentiable primitive.
pub fn primitive_errors() -> Vec<(&'static str, f64)> {
    vec![
        ("matmul", fd_error(vec![randn(&[3, 4], 1), randn(&[4, 2], 2)], |g, v| g.matmul(v[0], v[1]).unwrap())),
        ("add", fd_error(vec![randn(&[2, 3], 3), randn(&[2, 3], 4)], |g, v| g.add(v[0], v[1]).unwrap())),
        ("mul", fd_error(vec![randn(&[2, 3], 5), randn(&[2, 3], 6)], |g, v| g.mul(v[0], v[1]).unwrap())),
        ("add_row", fd_error(vec![randn(&[3, 4], 7), randn(&[4], 8)], |g, v| g.add_row(v[0], v[1]).unwrap())),
        ("scale", fd_error(vec![randn(&[5], 9)], |g, v| g.scale(v[0], -1.7))),
        ("relu", fd_error(vec![randn(&[4, 3], 10)], |g, v| g.relu(v[0]))),
        ("gelu", fd_error(vec![randn(&[4, 3], 11)], |g, v| g.gelu(v[0]))),
        ("layer_norm", fd_error(vec![randn(&[3, 5], 12), randn(&[5], 13), randn(&[5], 14)], |g, v| {
            g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap()
        })),
        ("softmax", fd_error(vec![randn(&[3, 4], 15)], |g, v| g.softmax(v[0]).unwrap())),
        ("attention", fd_error(vec![randn(&[6, 4], 16), randn(&[8, 4], 17), randn(&[8, 4], 18)], |g, v| {
            g.attention(v[0], v[1], v[2], 2, 2, &[true, false, true, true, true, true, false, true]).unwrap()
        })),
        ("gather_rows", fd_error(vec![randn(&[3, 2], 19)], |g, v| {
            g.gather_rows(v[0], vec![Some(2), None, Some(0), Some(2)]).unwrap()
        })),
        ("concat_rows", fd_error(vec![randn(&[2, 3], 20), randn(&[1, 3], 21)], |g, v| g.concat_rows(v[0], v[1]).unwrap())),
        ("masked_max_pool", fd_error(vec![randn(&[6, 3], 22)], |g, v| {
            g.masked_max_pool(v[0], 2, &[true, false, true, true, true, false]).unwrap()
        })),
        ("reshape", fd_error(vec![randn(&[2, 3], 23)], |g, v| g.reshape(v[0], vec![3, 2]).unwrap())),
        ("sum", fd_error(vec![randn(&[2, 3], 24)], |g, v| g.sum(v[0]))),
        ("huber", fd_error(vec![randn(&[3, 2], 25)], |g, v| {
            let target = [0.3, -2.0, 1.4, 0.0, 5.0, -0.2];
            g.huber(v[0], &target, &[1.0, 0.5, 1.0, 2.0, 1.0, 0.0], 1.0).unwrap()
        })),
        ("cross_entropy", fd_error(vec![randn(&[2, 4], 26)], |g, v| {
            g.cross_entropy(v[0], &[1, 3], &[0.5, 2.0]).unwrap()
        })),
    ]
}

/// Two toy scenes with exactly three agents and four lanes each.
pub fn gradcheck_scenes(seed: u64) -> Vec<PreprocessedScene> {
    let mut spec = SyntheticSpec::for_profile(emp_core::scenario::Profile::Av2);
    spec.t_h = TOY_T_H;
    spec.t_f = TOY_T_F;
    spec.agents = (3, 3);
    spec.lanes = (4, 4);
    let s = scenes(seed, 2, &spec);
    assert!(s.iter().all(|s| s.agent_count() == 3 && s.lane_count() == 4));
    s
}

fn loss_gradients(cfg: &ModelConfig, params: &ParameterStore<f64>, scenes: &[&PreprocessedScene]) -> BTreeMap<String, Tensor<f64>> {
    let batch = SceneBatch::new(scenes, cfg).unwrap();
    let net = Emp::new(cfg, params).unwrap();
    let mut g = Graph::new();
    let out = net.forward(&mut g, &batch).unwrap();
    let l = batch_loss(&mut g, &out, scenes, cfg.modes, 1.0, scenes.len()).unwrap();
    g.backward(l.total).unwrap().into_params()
}

/// Norm floor of the relative error. Below it the comparison is effectively
/// absolute, which covers gradients that vanish identically (key-projection
/// biases cancel inside the softmax) where central differences only see
/// rounding noise of order 1e-9.
pub const ZERO_GRADIENT: f64 = 1e-4;

/// Per-tensor relative error `‖a − n‖ / max(‖a‖, ‖n‖, ZERO_GRADIENT)` of the end-to-end
/// training loss, over the largest-gradient coordinates plus a random
/// sample of each parameter tensor.
pub fn model_errors(decoder: DecoderKind, seed: u64) -> Vec<(String, f64)> {
    let cfg = toy_model(decoder);
    let params = ParameterStore::<f64>::init(&cfg, seed);
    let owned = gradcheck_scenes(seed);
    let refs: Vec<&PreprocessedScene> = owned.iter().collect();
    let grads = loss_gradients(&cfg, &params, &refs);
    let mut r = rng::stream(seed, 123);
    let h = 1e-6;
    let mut out = Vec::new();
    for (name, t) in params.iter() {
        let g = grads.get(name).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; t.numel()]);
        let mut idx: Vec<usize> = (0..t.numel()).collect();
        idx.sort_by(|&a, &b| g[b].abs().total_cmp(&g[a].abs()));
        idx.truncate(3);
        idx.extend(sample(&mut r, t.numel(), t.numel().min(3)));
        idx.sort_unstable();
        idx.dedup();
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for &i in &idx {
            let mut p = params.clone();
            p.get_mut(name).unwrap().data_mut()[i] += h;
            let up = loss_value(&cfg, &p, &refs);
            p.get_mut(name).unwrap().data_mut()[i] -= 2.0 * h;
            let down = loss_value(&cfg, &p, &refs);
            let numeric = (up - down) / (2.0 * h);
            diff += (g[i] - numeric).powi(2);
            na += g[i] * g[i];
            nn += numeric * numeric;
        }
        let err = diff.sqrt() / na.sqrt().max(nn.sqrt()).max(ZERO_GRADIENT);
        out.push((name.clone(), err));
    }
    out
}

fn loss_value(cfg: &ModelConfig, params: &ParameterStore<f64>, scenes: &[&PreprocessedScene]) -> f64 {
    let batch = SceneBatch::new(scenes, cfg).unwrap();
    let net = Emp::new(cfg, params).unwrap();
    let mut g = Graph::inference();
    let out = net.forward(&mut g, &batch).unwrap();
    let l = batch_loss(&mut g, &out, scenes, cfg.modes, 1.0, scenes.len()).unwrap();
    g.scalar_value(l.total)
}
