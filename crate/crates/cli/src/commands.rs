use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::ops::ControlFlow;
use std::path::Path;

use emp_core::bench::{run_bench, BenchConfig, MEASUREMENT_NOTE};
use emp_core::metrics::MetricOptions;
use emp_core::model::{
    load_checkpoint, predict_batch, save_checkpoint, write_predictions, CheckpointHeader, ModelConfig,
    MultiModalPrediction, ParameterStore,
};
use emp_core::scenario::{
    generate_synthetic, load_scenario_file, preprocess, save_scenarios, PreprocessConfig, PreprocessedScene,
    Profile, SyntheticSpec,
};
use emp_core::training::{evaluate_params, train_with, write_log_csv, EpochRecord, TrainConfig};
use emp_core::{EmpError, Scalar};
use log::info;
use serde::Deserialize;

use crate::error::{CliError, CliResult};
use crate::{BenchArgs, EvalArgs, GenProfile, GenerateArgs, PredictArgs, Precision, TrainArgs, Variant};

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| EmpError::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| EmpError::io(path, e))?))
}

fn flush(mut w: BufWriter<File>, path: &Path) -> CliResult {
    w.flush().map_err(|e| EmpError::io(path, e).into())
}

/// Scenario file preprocessed under its own profile.
struct Dataset {
    profile: Profile,
    t_h: usize,
    t_f: usize,
    scenes: Vec<PreprocessedScene>,
}

fn load_dataset(path: &Path) -> CliResult<Dataset> {
    let file = load_scenario_file(path)?;
    let first = file.scenarios.first().ok_or(EmpError::InsufficientData { needed: 1, found: 0 })?;
    let (t_h, t_f) = (first.t_h, first.t_f);
    if let Some(s) = file.scenarios.iter().find(|s| (s.t_h, s.t_f) != (t_h, t_f)) {
        return Err(EmpError::InvalidScenario {
            scenario: s.id.clone(),
            msg: format!("horizons ({}, {}) differ from the file's ({t_h}, {t_f})", s.t_h, s.t_f),
        }
        .into());
    }
    let cfg = PreprocessConfig::with_radius(file.profile.radius());
    let scenes = file.scenarios.iter().map(|s| preprocess(s, &cfg)).collect::<Result<_, _>>()?;
    Ok(Dataset {
        profile: file.profile,
        t_h,
        t_f,
        scenes,
    })
}

fn check_horizons(data: &Dataset, model: &ModelConfig) -> CliResult {
    if (data.t_h, data.t_f) != (model.t_h, model.t_f) {
        return Err(EmpError::Config(format!(
            "data horizons ({}, {}) do not match the checkpoint's ({}, {})",
            data.t_h, data.t_f, model.t_h, model.t_f
        ))
        .into());
    }
    Ok(())
}

fn load_model(path: &Path) -> CliResult<(ParameterStore<f32>, CheckpointHeader)> {
    Ok(load_checkpoint(path)?)
}

pub fn generate(a: &GenerateArgs) -> CliResult {
    let profile = match a.profile {
        GenProfile::Av1 => Profile::Av1,
        GenProfile::Av2 => Profile::Av2,
    };
    let scenarios = generate_synthetic(a.seed, a.count, &SyntheticSpec::for_profile(profile));
    save_scenarios(&a.out, profile, &scenarios)?;
    info!("wrote {} scenarios to {}", scenarios.len(), a.out.display());
    Ok(())
}

/// Optional sections of the `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    train: TrainConfig,
    model: ModelOverrides,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ModelOverrides {
    d_model: Option<usize>,
    heads: Option<usize>,
    agent_depth: Option<usize>,
    scene_depth: Option<usize>,
    decoder_depth: Option<usize>,
    modes: Option<usize>,
}

impl ModelOverrides {
    fn apply(&self, cfg: &mut ModelConfig) {
        let pairs = [
            (self.d_model, &mut cfg.d_model),
            (self.heads, &mut cfg.heads),
            (self.agent_depth, &mut cfg.agent_depth),
            (self.scene_depth, &mut cfg.scene_depth),
            (self.decoder_depth, &mut cfg.decoder_depth),
            (self.modes, &mut cfg.modes),
        ];
        for (v, slot) in pairs {
            if let Some(v) = v {
                *slot = v;
            }
        }
    }
}

pub fn train(a: &TrainArgs) -> CliResult {
    let run: RunConfig = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| EmpError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| EmpError::Config(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    let mut tcfg = run.train;
    if let Some(seed) = a.seed {
        tcfg.seed = seed;
    }
    let data = load_dataset(&a.data)?;
    let val = match &a.val {
        Some(p) => {
            let v = load_dataset(p)?;
            if (v.t_h, v.t_f) != (data.t_h, data.t_f) {
                return Err(EmpError::Config("validation horizons differ from the training data".into()).into());
            }
            v.scenes
        }
        None => Vec::new(),
    };
    let mut model = match a.model {
        Variant::EmpM => ModelConfig::emp_m(data.profile),
        Variant::EmpD => ModelConfig::emp_d(data.profile),
    }
    .with_horizons(data.t_h, data.t_f);
    run.model.apply(&mut model);
    match a.precision {
        Precision::F32 => run_training::<f32>(a, &data, &val, &model, &tcfg),
        Precision::F64 => run_training::<f64>(a, &data, &val, &model, &tcfg),
    }
}

fn run_training<T: Scalar>(
    a: &TrainArgs,
    data: &Dataset,
    val: &[PreprocessedScene],
    model: &ModelConfig,
    tcfg: &TrainConfig,
) -> CliResult {
    fs::create_dir_all(&a.out).map_err(|e| EmpError::io(&a.out, e))?;
    let log_path = a.out.join("train_log.jsonl");
    let mut log = create(&log_path)?;
    let mut io_err = None;
    info!(
        "training {} (d_model {}) on {} scenes, {} validation",
        model.variant_name(),
        model.d_model,
        data.scenes.len(),
        val.len()
    );
    let outcome = train_with::<T, _>(&data.scenes, val, model, tcfg, |rec: &EpochRecord, _| {
        let line = serde_json::to_string(rec).expect("log record serializes");
        match writeln!(log, "{line}").and_then(|_| log.flush()) {
            Ok(()) => ControlFlow::Continue(()),
            Err(e) => {
                io_err = Some(e);
                ControlFlow::Break(())
            }
        }
    });
    if let Some(e) = io_err {
        return Err(EmpError::io(&log_path, e).into());
    }
    let outcome = outcome?;
    flush(log, &log_path)?;
    let csv_path = a.out.join("train_log.csv");
    let mut csv = create(&csv_path)?;
    write_log_csv(&mut csv, &outcome.log)?;
    flush(csv, &csv_path)?;
    let meta = serde_json::to_value(tcfg).map_err(EmpError::from)?;
    save_checkpoint(a.out.join("last.ckpt"), &outcome.last, model, tcfg.seed, Some(meta.clone()))?;
    if let Some((epoch, best)) = &outcome.best {
        save_checkpoint(a.out.join("best.ckpt"), best, model, tcfg.seed, Some(meta))?;
        info!("best validation minFDE6 at epoch {epoch}");
    }
    info!("{} optimizer steps; outputs in {}", outcome.steps, a.out.display());
    Ok(())
}

pub fn eval(a: &EvalArgs) -> CliResult {
    let (params, header) = load_model(&a.checkpoint)?;
    let data = load_dataset(&a.data)?;
    check_horizons(&data, &header.config)?;
    let opts = MetricOptions {
        ade_from_endpoint_mode: a.strict_av2,
    };
    let report = match a.precision {
        Precision::F32 => evaluate_params(&data.scenes, &params, &header.config, opts)?,
        Precision::F64 => evaluate_params(&data.scenes, &params.cast::<f64>(), &header.config, opts)?,
    };
    fs::create_dir_all(&a.out).map_err(|e| EmpError::io(&a.out, e))?;
    let jsonl = a.out.join("eval_report.jsonl");
    let mut w = create(&jsonl)?;
    report.write_jsonl(&mut w)?;
    flush(w, &jsonl)?;
    let csv = a.out.join("eval_report.csv");
    let mut w = create(&csv)?;
    report.write_csv(&mut w)?;
    flush(w, &csv)?;
    println!("{}", serde_json::to_string(&report).map_err(EmpError::from)?);
    Ok(())
}

fn predictions<T: Scalar>(
    scenes: &[PreprocessedScene],
    params: &ParameterStore<T>,
    model: &ModelConfig,
) -> CliResult<Vec<(String, MultiModalPrediction)>> {
    let mut out = Vec::with_capacity(scenes.len());
    for chunk in scenes.chunks(32) {
        let refs: Vec<&PreprocessedScene> = chunk.iter().collect();
        let preds = predict_batch(&refs, params, model)?;
        out.extend(chunk.iter().map(|s| s.scenario_id.clone()).zip(preds));
    }
    Ok(out)
}

pub fn predict(a: &PredictArgs) -> CliResult {
    let (params, header) = load_model(&a.checkpoint)?;
    let data = load_dataset(&a.data)?;
    check_horizons(&data, &header.config)?;
    let items = match a.precision {
        Precision::F32 => predictions(&data.scenes, &params, &header.config)?,
        Precision::F64 => predictions(&data.scenes, &params.cast::<f64>(), &header.config)?,
    };
    let mut w = create(&a.out)?;
    write_predictions(&mut w, header.config.variant_name(), &items)?;
    flush(w, &a.out)?;
    info!("wrote {} predictions to {}", items.len(), a.out.display());
    Ok(())
}

pub fn bench(a: &BenchArgs) -> CliResult {
    if a.threads == Some(0) {
        return Err(CliError::Usage("--threads must be positive".into()));
    }
    let (params, header) = load_model(&a.checkpoint)?;
    let data = load_dataset(&a.data)?;
    check_horizons(&data, &header.config)?;
    let cfg = BenchConfig {
        batch_size: a.batch,
        repetitions: a.reps,
        warmup: a.warmup,
        threads: a.threads,
    };
    if a.batch == 0 || a.reps == 0 {
        return Err(CliError::Usage("--batch and --reps must be positive".into()));
    }
    let result = match a.precision {
        Precision::F32 => run_bench(&data.scenes, &params, &header.config, &cfg)?,
        Precision::F64 => run_bench(&data.scenes, &params.cast::<f64>(), &header.config, &cfg)?,
    };
    eprintln!("# {MEASUREMENT_NOTE}");
    let text = serde_json::to_string_pretty(&result).map_err(EmpError::from)?;
    match &a.out {
        Some(path) => {
            let mut w = create(path)?;
            writeln!(w, "{text}").map_err(|e| EmpError::io(path, e))?;
            flush(w, path)?;
            info!(
                "{} median {:.2} ms over {} reps",
                result.model_variant, result.median_ms, result.repetitions
            );
        }
        None => println!("{text}"),
    }
    Ok(())
}
