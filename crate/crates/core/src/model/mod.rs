//! The encoder/decoder network, its parameters and checkpoints.

mod batch;
mod checkpoint;
mod config;
mod network;
mod params;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use batch::{relative_center, SceneBatch};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointHeader, InitScheme,
    TensorEntry, CHECKPOINT_FORMAT,
};
pub use config::{DecoderKind, FocalMemory, ModelConfig, ScoreHead};
pub use network::{AgentEncoding, Decoded, Emp, ForwardOutput, LaneMemory};
pub use params::{param_count, param_specs, Init, ParamSpec, ParameterStore, EMBEDDING_INIT_STD};

use crate::error::{EmpError, Result};
use crate::scenario::PreprocessedScene;
use crate::tensor::{Graph, Scalar};

/// `K` trajectories of `T_f` points in the focal center frame, with one
/// probability per trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiModalPrediction {
    pub trajectories: Vec<Vec<[f64; 2]>>,
    pub scores: Vec<f64>,
}

impl MultiModalPrediction {
    pub fn modes(&self) -> usize {
        self.scores.len()
    }

    /// Splits flat `B·K × 2·T_f` trajectories and `B × K` scores.
    pub fn unpack(traj: &[f64], scores: &[f64], batch: usize, modes: usize, t_f: usize) -> Vec<Self> {
        (0..batch)
            .map(|b| MultiModalPrediction {
                trajectories: (0..modes)
                    .map(|k| {
                        let row = &traj[(b * modes + k) * 2 * t_f..(b * modes + k + 1) * 2 * t_f];
                        row.chunks(2).map(|p| [p[0], p[1]]).collect()
                    })
                    .collect(),
                scores: scores[b * modes..(b + 1) * modes].to_vec(),
            })
            .collect()
    }
}

/// Forward pass over a batch of scenes; one prediction per scene.
pub fn predict_batch<T: Scalar>(
    scenes: &[&PreprocessedScene],
    params: &ParameterStore<T>,
    config: &ModelConfig,
) -> Result<Vec<MultiModalPrediction>> {
    let batch = SceneBatch::new(scenes, config)?;
    let model = Emp::new(config, params)?;
    let mut g = Graph::inference();
    let out = model.forward(&mut g, &batch)?;
    let traj: Vec<f64> = g.value(out.trajectories).iter().map(|x| x.as_f64()).collect();
    let scores: Vec<f64> = g.value(out.scores).iter().map(|x| x.as_f64()).collect();
    let preds = MultiModalPrediction::unpack(&traj, &scores, scenes.len(), config.modes, config.t_f);
    if let Some(bad) = preds
        .iter()
        .position(|p| p.trajectories.iter().flatten().flatten().any(|v| !v.is_finite()))
    {
        return Err(EmpError::Contract(format!(
            "non-finite trajectory for scene `{}`",
            scenes[bad].scenario_id
        )));
    }
    Ok(preds)
}

pub fn predict<T: Scalar>(
    scene: &PreprocessedScene,
    params: &ParameterStore<T>,
    config: &ModelConfig,
) -> Result<MultiModalPrediction> {
    Ok(predict_batch(&[scene], params, config)?.remove(0))
}

pub const PREDICTION_SCHEMA: &str = "emp-prediction/1";

#[derive(Serialize)]
struct PredictionHeader<'a> {
    schema: &'a str,
    model: &'a str,
    frame: &'a str,
}

#[derive(Serialize)]
struct PredictionRecord<'a> {
    id: &'a str,
    scores: &'a [f64],
    trajectories: &'a [Vec<[f64; 2]>],
}

/// Header line plus one record per scene, in the scenario-file dialect.
pub fn write_predictions<W: Write>(
    mut out: W,
    variant: &str,
    items: &[(String, MultiModalPrediction)],
) -> Result<()> {
    let io = |e| EmpError::io("<prediction stream>", e);
    let header = PredictionHeader {
        schema: PREDICTION_SCHEMA,
        model: variant,
        frame: "focal",
    };
    writeln!(out, "{}", serde_json::to_string(&header)?).map_err(io)?;
    for (id, p) in items {
        let rec = PredictionRecord {
            id,
            scores: &p.scores,
            trajectories: &p.trajectories,
        };
        writeln!(out, "{}", serde_json::to_string(&rec)?).map_err(io)?;
    }
    Ok(())
}
