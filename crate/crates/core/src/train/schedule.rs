use crate::error::{Error, Result};

/// Linear warmup to `peak_lr`, then cosine decay to zero at `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl Schedule {
    pub fn lr_at(&self, step: u64) -> Result<f64> {
        lr_at(step, self)
    }
}

pub fn lr_at(step: u64, s: &Schedule) -> Result<f64> {
    if step > s.total_steps {
        return Err(Error::StepOutOfRange {
            step,
            total: s.total_steps,
        });
    }
    if step < s.warmup_steps {
        return Ok(s.peak_lr * step as f64 / s.warmup_steps as f64);
    }
    let span = (s.total_steps - s.warmup_steps) as f64;
    if span == 0.0 {
        return Ok(s.peak_lr);
    }
    let t = (step - s.warmup_steps) as f64 / span;
    Ok(s.peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
}
