//! Argoverse-style forecasting metrics.
//!
//! `k = 1` metrics use the single most confident mode; `k > 1` metrics use
//! the `k` most confident modes (ties broken by index) and take the minimum
//! over them. minADE and minFDE each minimize their own criterion; the brier
//! penalty and the miss indicator use the minFDE winner.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{EmpError, Result};
use crate::model::MultiModalPrediction;

/// Endpoint distance above which a scenario counts as a miss, meters.
pub const MISS_THRESHOLD: f64 = 2.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricOptions {
    /// Score minADE on the endpoint-best mode instead of the ADE-best one.
    pub ade_from_endpoint_mode: bool,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Indices of the `k` highest-scoring modes, best first.
pub fn top_k_modes(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k.min(scores.len()));
    idx
}

/// Mean pointwise L2 error of one trajectory.
pub fn ade(traj: &[[f64; 2]], target: &[[f64; 2]]) -> f64 {
    traj.iter().zip(target).map(|(&p, &t)| dist(p, t)).sum::<f64>() / target.len() as f64
}

pub fn fde(traj: &[[f64; 2]], target: &[[f64; 2]]) -> f64 {
    dist(*traj.last().unwrap(), *target.last().unwrap())
}

/// Minimum ADE over the `k` most confident modes (`k` clamps to `K`).
pub fn min_ade(pred: &MultiModalPrediction, target: &[[f64; 2]], k: usize) -> f64 {
    top_k_modes(&pred.scores, k)
        .into_iter()
        .map(|m| ade(&pred.trajectories[m], target))
        .fold(f64::INFINITY, f64::min)
}

/// Minimum FDE over the `k` most confident modes and the mode achieving it
/// (lowest index among ties).
pub fn min_fde(pred: &MultiModalPrediction, target: &[[f64; 2]], k: usize) -> (f64, usize) {
    let mut modes = top_k_modes(&pred.scores, k);
    modes.sort_unstable();
    let mut best = (f64::INFINITY, modes[0]);
    for m in modes {
        let e = fde(&pred.trajectories[m], target);
        if e < best.0 {
            best = (e, m);
        }
    }
    best
}

/// `minFDE + (1 − p)²` with `p` the score of the endpoint-best mode.
pub fn brier_min_fde(pred: &MultiModalPrediction, target: &[[f64; 2]], k: usize) -> f64 {
    let (e, m) = min_fde(pred, target, k);
    e + (1.0 - pred.scores[m]).powi(2)
}

pub fn is_miss(pred: &MultiModalPrediction, target: &[[f64; 2]], k: usize) -> bool {
    min_fde(pred, target, k).0 > MISS_THRESHOLD
}

/// Fraction of instances whose best endpoint among the top `k` misses.
pub fn miss_rate<'a>(
    instances: impl IntoIterator<Item = (&'a MultiModalPrediction, &'a [[f64; 2]])>,
    k: usize,
) -> f64 {
    let (mut misses, mut n) = (0usize, 0usize);
    for (p, t) in instances {
        n += 1;
        misses += is_miss(p, t, k) as usize;
    }
    if n == 0 {
        0.0
    } else {
        misses as f64 / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    pub id: String,
    pub minade_1: f64,
    pub minfde_1: f64,
    pub minade_6: f64,
    pub minfde_6: f64,
    pub mr_6: f64,
    pub brier_minfde_6: f64,
}

impl ScenarioMetrics {
    pub fn compute(id: &str, pred: &MultiModalPrediction, target: &[[f64; 2]], opts: MetricOptions) -> Self {
        let k = 6.min(pred.modes());
        let (fde6, best) = min_fde(pred, target, k);
        let ade6 = if opts.ade_from_endpoint_mode {
            ade(&pred.trajectories[best], target)
        } else {
            min_ade(pred, target, k)
        };
        Self {
            id: id.to_string(),
            minade_1: min_ade(pred, target, 1),
            minfde_1: min_fde(pred, target, 1).0,
            minade_6: ade6,
            minfde_6: fde6,
            mr_6: if fde6 > MISS_THRESHOLD { 1.0 } else { 0.0 },
            brier_minfde_6: fde6 + (1.0 - pred.scores[best]).powi(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario_count: usize,
    pub minade_1: f64,
    pub minfde_1: f64,
    pub minade_6: f64,
    pub minfde_6: f64,
    pub mr_6: f64,
    pub brier_minfde_6: f64,
    #[serde(skip)]
    pub per_scenario: Vec<ScenarioMetrics>,
}

impl EvalReport {
    pub fn from_scenarios(per_scenario: Vec<ScenarioMetrics>) -> Self {
        let n = per_scenario.len();
        let mean = |f: fn(&ScenarioMetrics) -> f64| {
            if n == 0 {
                0.0
            } else {
                per_scenario.iter().map(f).sum::<f64>() / n as f64
            }
        };
        Self {
            scenario_count: n,
            minade_1: mean(|m| m.minade_1),
            minfde_1: mean(|m| m.minfde_1),
            minade_6: mean(|m| m.minade_6),
            minfde_6: mean(|m| m.minfde_6),
            mr_6: mean(|m| m.mr_6),
            brier_minfde_6: mean(|m| m.brier_minfde_6),
            per_scenario,
        }
    }

    /// Aggregate record, then one record per scenario.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| EmpError::io("<report stream>", e);
        writeln!(out, "{}", serde_json::to_string(self)?).map_err(io)?;
        for m in &self.per_scenario {
            writeln!(out, "{}", serde_json::to_string(m)?).map_err(io)?;
        }
        Ok(())
    }

    /// Per-scenario rows followed by a `mean` row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for m in &self.per_scenario {
            w.serialize(m)?;
        }
        w.serialize(ScenarioMetrics {
            id: "mean".into(),
            minade_1: self.minade_1,
            minfde_1: self.minfde_1,
            minade_6: self.minade_6,
            minfde_6: self.minfde_6,
            mr_6: self.mr_6,
            brier_minfde_6: self.brier_minfde_6,
        })
        ?;
        w.flush().map_err(|e| EmpError::io("<report csv>", e))
    }
}

/// Metrics for every `(id, prediction, target)` triple.
pub fn evaluate<'a>(
    items: impl IntoIterator<Item = (&'a str, &'a MultiModalPrediction, &'a [[f64; 2]])>,
    opts: MetricOptions,
) -> EvalReport {
    EvalReport::from_scenarios(
        items
            .into_iter()
            .map(|(id, p, t)| ScenarioMetrics::compute(id, p, t, opts))
            .collect(),
    )
}
