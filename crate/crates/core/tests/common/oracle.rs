//! Brute-force metric definitions, written without the library's helpers.

use emp_core::model::MultiModalPrediction;
use rand::Rng;

pub struct Brute {
    pub min_ade: f64,
    pub min_fde: f64,
    pub miss: bool,
    pub brier: f64,
}

/// Repeated arg-max selection of the `k` best scores (lowest index on ties).
fn select(scores: &[f64], k: usize) -> Vec<usize> {
    let mut taken = vec![false; scores.len()];
    let mut out = Vec::new();
    for _ in 0..k.min(scores.len()) {
        let mut best: Option<usize> = None;
        for i in 0..scores.len() {
            if taken[i] {
                continue;
            }
            if best.is_none_or(|b| scores[i] > scores[b]) {
                best = Some(i);
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        out.push(b);
    }
    out
}

pub fn brute(p: &MultiModalPrediction, target: &[[f64; 2]], k: usize) -> Brute {
    let sel = select(&p.scores, k);
    let t_f = target.len();
    let mut min_ade = f64::MAX;
    let mut fde_best = (f64::MAX, usize::MAX);
    for &m in &sel {
        let mut total = 0.0;
        for t in 0..t_f {
            let dx = p.trajectories[m][t][0] - target[t][0];
            let dy = p.trajectories[m][t][1] - target[t][1];
            total += (dx * dx + dy * dy).sqrt();
        }
        min_ade = min_ade.min(total / t_f as f64);
        let dx = p.trajectories[m][t_f - 1][0] - target[t_f - 1][0];
        let dy = p.trajectories[m][t_f - 1][1] - target[t_f - 1][1];
        let fde = (dx * dx + dy * dy).sqrt();
        if fde < fde_best.0 || (fde == fde_best.0 && m < fde_best.1) {
            fde_best = (fde, m);
        }
    }
    let pb = p.scores[fde_best.1];
    Brute {
        min_ade,
        min_fde: fde_best.0,
        miss: fde_best.0 > 2.0,
        brier: fde_best.0 + (1.0 - pb) * (1.0 - pb),
    }
}

/// Random instance with K=6: scores sometimes tied, modes sometimes exact.
pub fn random_instance<R: Rng>(r: &mut R) -> (MultiModalPrediction, Vec<[f64; 2]>) {
    let t_f = r.gen_range(1..=30);
    let target: Vec<[f64; 2]> = (0..t_f)
        .map(|t| [t as f64 * r.gen_range(0.0..2.0), r.gen_range(-3.0..3.0)])
        .collect();
    let k = 6;
    let spread = r.gen_range(0.1..6.0);
    let mut trajectories: Vec<Vec<[f64; 2]>> = (0..k)
        .map(|_| {
            target
                .iter()
                .map(|p| [p[0] + r.gen_range(-spread..spread), p[1] + r.gen_range(-spread..spread)])
                .collect()
        })
        .collect();
    if r.gen_bool(0.2) {
        let m = r.gen_range(0..k);
        trajectories[m] = target.clone();
    }
    let raw: Vec<f64> = (0..k)
        .map(|_| {
            let v: f64 = r.gen_range(0.01..1.0);
            if r.gen_bool(0.3) {
                (v * 4.0).round() / 4.0 + 0.01
            } else {
                v
            }
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    let scores = raw.iter().map(|v| v / sum).collect();
    (MultiModalPrediction { trajectories, scores }, target)
}
