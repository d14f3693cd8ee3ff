//! Loss construction, AdamW, the learning-rate schedule and the epoch loop.

mod config;
mod loss;
mod optim;
mod schedule;
mod trainer;

pub use config::TrainConfig;
pub use loss::{auxiliary_loss, batch_loss, best_mode, classification_loss, huber_loss, total_loss, LossVars};
pub use optim::{adamw_step, clip_gradients, global_norm, OptimizerState};
pub use schedule::lr_at;
pub use trainer::{
    evaluate_params, train, train_with, write_log_csv, write_log_jsonl, EpochRecord, TrainOutcome,
};
