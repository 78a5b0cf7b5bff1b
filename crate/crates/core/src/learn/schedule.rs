use crate::error::{Error, Result};

/// Linear warm-up from 0 to `base_lr`, then a single cosine decay to 0.
pub fn lr_at(step: usize, total_steps: usize, warmup_steps: usize, base_lr: f64) -> Result<f64> {
    if step > total_steps || warmup_steps >= total_steps {
        return Err(Error::Bounds(format!(
            "step {step} with {warmup_steps} warm-up steps of {total_steps}"
        )));
    }
    if step < warmup_steps {
        return Ok(base_lr * step as f64 / warmup_steps as f64);
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}
