use std::collections::BTreeMap;

use crate::error::{EmpError, Result};
use crate::model::ParameterStore;
use crate::tensor::{Scalar, Tensor};

/// AdamW moments, kept in `f64` regardless of the parameter precision.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new<T: Scalar>(params: &ParameterStore<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(k, t)| (k.clone(), vec![0.0; t.numel()]))
                .collect::<BTreeMap<_, _>>()
        };
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
            beta1,
            beta2,
            eps,
        }
    }
}

/// One AdamW update. Parameters without a gradient entry are treated as
/// having a zero gradient.
pub fn adamw_step<T: Scalar>(
    params: &mut ParameterStore<T>,
    grads: &BTreeMap<String, Tensor<T>>,
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powf(state.step as f64);
    let c2 = 1.0 - b2.powf(state.step as f64);
    let decay = 1.0 - lr * weight_decay;
    for (name, theta) in params.iter_mut() {
        let g = grads.get(name).map(|t| t.data());
        if let Some(g) = g {
            if g.len() != theta.numel() {
                return Err(EmpError::ParamShape {
                    path: name.clone(),
                    found: vec![g.len()],
                    expected: theta.shape().to_vec(),
                });
            }
        }
        let (m, v) = match (state.m.get_mut(name), state.v.get_mut(name)) {
            (Some(m), Some(v)) if m.len() == theta.numel() => (m, v),
            _ => return Err(EmpError::Contract(format!("optimizer state does not cover `{name}`"))),
        };
        for (i, p) in theta.data_mut().iter_mut().enumerate() {
            let gi = g.map_or(0.0, |g| g[i].as_f64());
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let update = (m[i] / c1) / ((v[i] / c2).sqrt() + state.eps);
            *p = T::of(p.as_f64() * decay - lr * update);
        }
    }
    Ok(())
}

pub fn global_norm<T: Scalar>(grads: &BTreeMap<String, Tensor<T>>) -> f64 {
    grads
        .values()
        .flat_map(|t| t.data())
        .map(|x| x.as_f64() * x.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales every gradient by `clip_norm / norm` when the global L2 norm
/// exceeds `clip_norm`. Returns the norm before clipping.
pub fn clip_gradients<T: Scalar>(grads: &mut BTreeMap<String, Tensor<T>>, clip_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > clip_norm {
        for t in grads.values_mut() {
            for x in t.data_mut() {
                *x = T::of(x.as_f64() * clip_norm / norm);
            }
        }
    }
    norm
}
