use std::f64::consts::PI;

use super::TrainConfig;

/// Learning rate for optimizer step `step` (0-based): linear warmup from 0,
/// then cosine decay reaching `final_lr` on the last step.
pub fn lr_at(step: usize, steps_per_epoch: usize, cfg: &TrainConfig) -> f64 {
    let warmup = cfg.warmup_epochs * steps_per_epoch;
    let total = cfg.epochs * steps_per_epoch;
    if step < warmup {
        return cfg.peak_lr * step as f64 / warmup as f64;
    }
    let span = total.saturating_sub(1).saturating_sub(warmup);
    if step == warmup || span == 0 {
        return cfg.peak_lr;
    }
    if step >= total - 1 {
        return cfg.final_lr;
    }
    let progress = (step - warmup) as f64 / span as f64;
    cfg.final_lr + (cfg.peak_lr - cfg.final_lr) * 0.5 * (1.0 + (PI * progress).cos())
}
