//! Winner-take-all regression, mode classification and the per-agent
//! auxiliary regression.

use crate::error::{EmpError, Result};
use crate::metrics::ade;
use crate::model::ForwardOutput;
use crate::scenario::PreprocessedScene;
use crate::tensor::{Graph, Scalar, Tensor, Var};

fn flat(points: &[[f64; 2]]) -> Vec<f64> {
    points.iter().flatten().copied().collect()
}

/// Mode with the smallest mean pointwise L2 distance; lowest index on ties.
pub fn best_mode(prediction: &[Vec<[f64; 2]>], target: &[[f64; 2]]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (k, traj) in prediction.iter().enumerate() {
        let e = ade(traj, target);
        if e < best.0 {
            best = (e, k);
        }
    }
    best.1
}

/// Elementwise Huber, averaged over all coordinates.
pub fn huber_loss(pred: &[[f64; 2]], target: &[[f64; 2]], delta: f64) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(EmpError::shape("huber_loss", &[pred.len(), 2], &[target.len(), 2]));
    }
    let mut g = Graph::<f64>::new();
    let p = g.constant(Tensor::new(vec![pred.len(), 2], flat(pred))?);
    let w = vec![1.0 / (2 * pred.len()) as f64; 2 * pred.len()];
    let l = g.huber(p, &flat(target), &w, delta)?;
    Ok(g.scalar_value(l))
}

/// `−log softmax(logits)[best]`.
pub fn classification_loss(logits: &[f64], best: usize) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let l = g.constant(Tensor::new(vec![1, logits.len()], logits.to_vec())?);
    let ce = g.cross_entropy(l, &[best], &[1.0])?;
    Ok(g.scalar_value(ce))
}

/// Huber over every valid future coordinate of every agent, averaged over
/// the valid ones. `pred` and `futures` are `A × T_f` points.
pub fn auxiliary_loss(pred: &[[f64; 2]], futures: &[[f64; 2]], mask: &[bool], delta: f64) -> Result<f64> {
    if pred.len() != futures.len() || pred.len() != mask.len() {
        return Err(EmpError::shape("auxiliary_loss", &[pred.len()], &[futures.len(), mask.len()]));
    }
    let mut g = Graph::<f64>::new();
    let p = g.constant(Tensor::new(vec![pred.len() * 2], flat(pred))?);
    let w = aux_weights(mask, 1.0);
    let l = g.huber(p, &flat(futures), &w, delta)?;
    Ok(g.scalar_value(l))
}

/// Unit-weighted sum of the three terms for one scene.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    prediction: &[Vec<[f64; 2]>],
    logits: &[f64],
    target: &[[f64; 2]],
    aux_pred: &[[f64; 2]],
    futures: &[[f64; 2]],
    future_mask: &[bool],
    delta: f64,
) -> Result<f64> {
    let best = best_mode(prediction, target);
    Ok(huber_loss(&prediction[best], target, delta)?
        + classification_loss(logits, best)?
        + auxiliary_loss(aux_pred, futures, future_mask, delta)?)
}

fn aux_weights(mask: &[bool], scale: f64) -> Vec<f64> {
    let valid = mask.iter().filter(|&&m| m).count();
    let w = if valid == 0 { 0.0 } else { scale / (2 * valid) as f64 };
    mask.iter().flat_map(|&m| [if m { w } else { 0.0 }; 2]).collect()
}

/// Scalar loss nodes for a batch of scenes.
#[derive(Debug, Clone)]
pub struct LossVars {
    pub total: Var,
    pub reg: Var,
    pub cls: Var,
    pub aux: Var,
    /// Winner mode per scene.
    pub best: Vec<usize>,
}

/// Builds the training loss on top of a forward pass over `scenes`. Every
/// scene contributes with weight `1 / denom`, so chunks of one batch can be
/// differentiated separately and summed.
pub fn batch_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    out: &ForwardOutput,
    scenes: &[&PreprocessedScene],
    modes: usize,
    delta: f64,
    denom: usize,
) -> Result<LossVars> {
    let b = scenes.len();
    let t_f = scenes.first().map_or(0, |s| s.t_f);
    let traj = g.value(out.trajectories);
    let mut best = Vec::with_capacity(b);
    let mut target = Vec::with_capacity(b * 2 * t_f);
    for (i, s) in scenes.iter().enumerate() {
        if !s.focal_future_valid {
            return Err(EmpError::InvalidScenario {
                scenario: s.scenario_id.clone(),
                msg: "focal future is not fully observed".into(),
            });
        }
        let pred: Vec<Vec<[f64; 2]>> = (0..modes)
            .map(|k| {
                let row = &traj[(i * modes + k) * 2 * t_f..(i * modes + k + 1) * 2 * t_f];
                row.chunks(2).map(|p| [p[0].as_f64(), p[1].as_f64()]).collect()
            })
            .collect();
        best.push(best_mode(&pred, &s.focal_future_target));
        target.extend(flat(&s.focal_future_target));
    }
    let scale = 1.0 / denom as f64;
    let rows = best.iter().enumerate().map(|(i, &k)| Some(i * modes + k)).collect();
    let chosen = g.gather_rows(out.trajectories, rows)?;
    let cast = |v: Vec<f64>| v.into_iter().map(T::of).collect::<Vec<T>>();
    let reg_w = vec![scale / (2 * t_f) as f64; b * 2 * t_f];
    let reg = g.huber(chosen, &cast(target), &cast(reg_w), T::of(delta))?;
    let cls = g.cross_entropy(out.logits, &best, &cast(vec![scale; b]))?;

    let mut aux_target = Vec::new();
    let mut aux_w = Vec::new();
    for s in scenes {
        aux_target.extend(flat(&s.agent_future_targets));
        aux_w.extend(aux_weights(&s.agent_future_mask, scale));
    }
    let aux = g.huber(out.aux, &cast(aux_target), &cast(aux_w), T::of(delta))?;
    let total = g.add(reg, cls)?;
    let total = g.add(total, aux)?;
    Ok(LossVars {
        total,
        reg,
        cls,
        aux,
        best,
    })
}
