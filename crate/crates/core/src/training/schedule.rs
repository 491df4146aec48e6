use std::f64::consts::PI;

use super::TrainConfig;

/// Linear warmup from 0 to `lr_max` over `warmup_steps`, then cosine decay to
/// `lr_min` at `total_steps`.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    let step = step.min(cfg.total_steps);
    if step < cfg.warmup_steps {
        return cfg.lr_max * step as f64 / cfg.warmup_steps as f64;
    }
    let span = (cfg.total_steps - cfg.warmup_steps) as f64;
    if span == 0.0 {
        return cfg.lr_min;
    }
    let progress = (step - cfg.warmup_steps) as f64 / span;
    // lr_min + 0.5·(lr_max − lr_min)·(1 + cos πp), written as a convex
    // combination so both endpoints come out exact.
    let w = 0.5 * (1.0 + (PI * progress).cos());
    cfg.lr_min * (1.0 - w) + cfg.lr_max * w
}
