use std::collections::BTreeMap;
use std::io::Write;
use std::ops::ControlFlow;
use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{adamw_step, batch_loss, clip_gradients, lr_at, OptimizerState, TrainConfig};
use crate::error::{EmpError, Result};
use crate::metrics::{evaluate, EvalReport, MetricOptions};
use crate::model::{predict_batch, Emp, ModelConfig, ParameterStore, SceneBatch};
use crate::rng::{self, streams};
use crate::scenario::PreprocessedScene;
use crate::tensor::{Graph, Scalar, Tensor};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Rate used by the epoch's last step.
    pub lr: f64,
    pub loss_total: f64,
    pub loss_reg: f64,
    pub loss_cls: f64,
    pub loss_aux: f64,
    pub val_minade6: Option<f64>,
    pub val_minfde6: Option<f64>,
    pub val_mr6: Option<f64>,
    pub val_brier_minfde6: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub last: ParameterStore<T>,
    /// Parameters with the lowest validation minFDE₆ and their epoch.
    pub best: Option<(usize, ParameterStore<T>)>,
    pub log: Vec<EpochRecord>,
    pub steps: usize,
}

pub fn train<T: Scalar>(
    train_set: &[PreprocessedScene],
    val_set: &[PreprocessedScene],
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_with(train_set, val_set, model, cfg, |_, _| ControlFlow::Continue(()))
}

/// Like [`train`], calling `on_epoch` after every epoch; `Break` stops early.
pub fn train_with<T: Scalar, F>(
    train_set: &[PreprocessedScene],
    val_set: &[PreprocessedScene],
    model: &ModelConfig,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome<T>>
where
    F: FnMut(&EpochRecord, &ParameterStore<T>) -> ControlFlow<()>,
{
    model.validate()?;
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(EmpError::Config("training set is empty".into()));
    }
    let mut params = ParameterStore::<T>::init(model, cfg.seed);
    let mut opt = OptimizerState::new(&params, cfg.beta1, cfg.beta2, cfg.eps);
    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let start = Instant::now();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ParameterStore<T>)> = None;
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::substream(cfg.seed, streams::SHUFFLE, epoch as u64));
        let mut sums = [0.0f64; 4];
        let mut lr = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            lr = lr_at(step, steps_per_epoch, cfg);
            let scenes: Vec<&PreprocessedScene> = batch.iter().map(|&i| &train_set[i]).collect();
            let (mut grads, losses) = batch_gradients(&scenes, &params, model, cfg)?;
            if !losses[0].is_finite() {
                return Err(EmpError::Divergence { step, loss: losses[0] });
            }
            let norm = clip_gradients(&mut grads, cfg.clip_norm);
            if !norm.is_finite() {
                return Err(EmpError::Divergence { step, loss: norm });
            }
            adamw_step(&mut params, &grads, &mut opt, lr, cfg.weight_decay)?;
            for (s, l) in sums.iter_mut().zip(losses) {
                *s += l * scenes.len() as f64;
            }
            debug!("step {step} lr {lr:.3e} loss {:.5} grad norm {norm:.4}", losses[0]);
            step += 1;
        }
        let n = train_set.len() as f64;
        let val = if !val_set.is_empty() && ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs) {
            Some(evaluate_params(val_set, &params, model, MetricOptions::default())?)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            lr,
            loss_total: sums[0] / n,
            loss_reg: sums[1] / n,
            loss_cls: sums[2] / n,
            loss_aux: sums[3] / n,
            val_minade6: val.as_ref().map(|r| r.minade_6),
            val_minfde6: val.as_ref().map(|r| r.minfde_6),
            val_mr6: val.as_ref().map(|r| r.mr_6),
            val_brier_minfde6: val.as_ref().map(|r| r.brier_minfde_6),
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch} loss {:.4} (reg {:.4} cls {:.4} aux {:.4}) val minFDE6 {:?}",
            record.loss_total, record.loss_reg, record.loss_cls, record.loss_aux, record.val_minfde6
        );
        if let Some(f) = record.val_minfde6 {
            if best.as_ref().is_none_or(|b| f < b.1) {
                best = Some((epoch, f, params.clone()));
            }
        }
        let flow = on_epoch(&record, &params);
        log.push(record);
        if flow.is_break() {
            break;
        }
    }
    Ok(TrainOutcome {
        last: params,
        best: best.map(|(e, _, p)| (e, p)),
        log,
        steps: step,
    })
}

type Grads<T> = BTreeMap<String, Tensor<T>>;

/// Gradients of the batch loss and its `[total, reg, cls, aux]` values.
/// Micro-batches are differentiated independently and reduced in order, so
/// the result does not depend on the number of worker threads.
fn batch_gradients<T: Scalar>(
    scenes: &[&PreprocessedScene],
    params: &ParameterStore<T>,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(Grads<T>, [f64; 4])> {
    let denom = scenes.len();
    let parts: Vec<Result<(Grads<T>, [f64; 4])>> = scenes
        .par_chunks(cfg.micro_batch)
        .map(|chunk| {
            let batch = SceneBatch::new(chunk, model)?;
            let net = Emp::new(model, params)?;
            let mut g = Graph::new();
            let out = net.forward(&mut g, &batch)?;
            let l = batch_loss(&mut g, &out, chunk, model.modes, cfg.huber_delta, denom)?;
            let values = [l.total, l.reg, l.cls, l.aux].map(|v| g.scalar_value(v).as_f64());
            Ok((g.backward(l.total)?.into_params(), values))
        })
        .collect();
    let mut parts = parts.into_iter();
    let (mut acc, mut values) = parts.next().expect("non-empty batch")?;
    for part in parts {
        let (grads, v) = part?;
        for (name, t) in grads {
            match acc.get_mut(&name) {
                Some(a) => a.data_mut().iter_mut().zip(t.data()).for_each(|(x, &y)| *x += y),
                None => {
                    acc.insert(name, t);
                }
            }
        }
        for (a, b) in values.iter_mut().zip(v) {
            *a += b;
        }
    }
    Ok((acc, values))
}

/// Metrics of `params` on scenes with fully observed focal futures.
pub fn evaluate_params<T: Scalar>(
    scenes: &[PreprocessedScene],
    params: &ParameterStore<T>,
    model: &ModelConfig,
    opts: MetricOptions,
) -> Result<EvalReport> {
    const CHUNK: usize = 32;
    let mut preds = Vec::with_capacity(scenes.len());
    for chunk in scenes.chunks(CHUNK) {
        let refs: Vec<&PreprocessedScene> = chunk.iter().collect();
        preds.extend(predict_batch(&refs, params, model)?);
    }
    if let Some(s) = scenes.iter().find(|s| !s.focal_future_valid) {
        return Err(EmpError::InvalidScenario {
            scenario: s.scenario_id.clone(),
            msg: "focal future is not fully observed".into(),
        });
    }
    Ok(evaluate(
        scenes
            .iter()
            .zip(&preds)
            .map(|(s, p)| (s.scenario_id.as_str(), p, s.focal_future_target.as_slice())),
        opts,
    ))
}

pub fn write_log_jsonl<W: Write>(mut out: W, log: &[EpochRecord]) -> Result<()> {
    for r in log {
        writeln!(out, "{}", serde_json::to_string(r)?).map_err(|e| EmpError::io("<training log>", e))?;
    }
    Ok(())
}

pub fn write_log_csv<W: Write>(out: W, log: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in log {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| EmpError::io("<training log csv>", e))
}
