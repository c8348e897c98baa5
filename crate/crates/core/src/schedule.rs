//! Linear warmup followed by half-cosine decay to zero.

/// Learning rate at `step` (0 ..= total_steps):
///
/// * `step <= warmup`: `base_lr * step / warmup`
/// * otherwise: `base_lr * 0.5 * (1 + cos(pi * (step - warmup) / (total - warmup)))`
pub fn lr_at(step: u64, warmup_steps: u64, total_steps: u64, base_lr: f64) -> f64 {
    let step = step.min(total_steps);
    if warmup_steps > 0 && step <= warmup_steps {
        return base_lr * step as f64 / warmup_steps as f64;
    }
    let decay = total_steps.saturating_sub(warmup_steps);
    if decay == 0 {
        return 0.0;
    }
    let progress = (step - warmup_steps) as f64 / decay as f64;
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}
