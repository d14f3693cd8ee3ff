//! Batch forward-latency measurement.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EmpError, Result};
use crate::model::{Emp, ModelConfig, ParameterStore, SceneBatch};
use crate::scenario::PreprocessedScene;
use crate::tensor::{Graph, Scalar};

/// What the timings cover.
pub const MEASUREMENT_NOTE: &str =
    "model forward pass only; preprocessing, batch collation and output serialization excluded";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub batch_size: usize,
    pub repetitions: usize,
    pub warmup: usize,
    /// Worker threads; `None` uses the available hardware parallelism.
    pub threads: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            repetitions: 50,
            warmup: 5,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub measurement: String,
    pub model_variant: String,
    pub batch_size: usize,
    pub repetitions: usize,
    pub warmup: usize,
    pub threads: usize,
    pub per_rep_ms: Vec<f64>,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    /// Standard error of the mean.
    pub std_error_ms: f64,
    pub hardware: String,
}

/// `(mean, median, p95, standard error)` of the samples; p95 uses the
/// nearest-rank definition.
pub fn summarize(samples: &[f64]) -> (f64, f64, f64, f64) {
    let n = samples.len();
    assert!(n > 0, "summarize needs at least one sample");
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let mean = s.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    };
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
    let se = if n > 1 {
        let var = s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    (mean, median, s[rank - 1], se)
}

pub fn hardware_note() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|t| {
            t.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|s| s.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{cpu}; {cores} hardware threads; {}-{}", std::env::consts::OS, std::env::consts::ARCH)
}

/// Times `repetitions` forward passes over the first `batch_size` scenes,
/// after `warmup` discarded passes. With `threads > 1` the batch is split
/// into one contiguous chunk per worker.
pub fn run_bench<T: Scalar>(
    scenes: &[PreprocessedScene],
    params: &ParameterStore<T>,
    model: &ModelConfig,
    cfg: &BenchConfig,
) -> Result<BenchResult> {
    if cfg.repetitions == 0 || cfg.batch_size == 0 {
        return Err(EmpError::Config("batch size and repetitions must be positive".into()));
    }
    if scenes.len() < cfg.batch_size {
        return Err(EmpError::InsufficientData {
            needed: cfg.batch_size,
            found: scenes.len(),
        });
    }
    let threads = cfg
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, cfg.batch_size);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| EmpError::Config(format!("thread pool: {e}")))?;
    let refs: Vec<&PreprocessedScene> = scenes[..cfg.batch_size].iter().collect();
    let batches = refs
        .chunks(cfg.batch_size.div_ceil(threads))
        .map(|c| SceneBatch::new(c, model))
        .collect::<Result<Vec<_>>>()?;
    let net = Emp::new(model, params)?;
    let forward = |b: &SceneBatch| -> Result<()> {
        let mut g = Graph::inference();
        let out = net.forward(&mut g, b)?;
        std::hint::black_box(g.value(out.scores));
        Ok(())
    };
    let mut samples = Vec::with_capacity(cfg.repetitions);
    for rep in 0..cfg.warmup + cfg.repetitions {
        let t = Instant::now();
        pool.install(|| batches.par_iter().try_for_each(forward))?;
        let ms = t.elapsed().as_secs_f64() * 1e3;
        if rep >= cfg.warmup {
            samples.push(ms);
        }
    }
    let (mean_ms, median_ms, p95_ms, std_error_ms) = summarize(&samples);
    Ok(BenchResult {
        measurement: MEASUREMENT_NOTE.into(),
        model_variant: model.variant_name().into(),
        batch_size: cfg.batch_size,
        repetitions: cfg.repetitions,
        warmup: cfg.warmup,
        threads,
        per_rep_ms: samples,
        mean_ms,
        median_ms,
        p95_ms,
        std_error_ms,
        hardware: hardware_note(),
    })
}
