use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Linear warmup to `max_lr`, then cosine decay towards `min_lr`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub max_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            max_lr: 6e-4,
            min_lr: 6e-5,
            warmup_steps: 715,
            total_steps: 3300,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_lr > 0.0 && self.min_lr <= self.max_lr && self.max_lr.is_finite()) {
            return Err(Error::ConfigInvalid(format!(
                "need 0 < min_lr <= max_lr, got {} and {}",
                self.min_lr, self.max_lr
            )));
        }
        if self.warmup_steps >= self.total_steps {
            return Err(Error::ConfigInvalid(format!(
                "warmup_steps {} must be below total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        Ok(())
    }
}

/// Learning rate for optimizer step `step` (0-based).
pub fn lr_at(step: u64, s: &LrSchedule) -> Result<f64> {
    if step >= s.total_steps {
        return Err(Error::StepOutOfRange {
            step,
            total_steps: s.total_steps,
        });
    }
    if step < s.warmup_steps {
        return Ok(s.max_lr * (step + 1) as f64 / s.warmup_steps as f64);
    }
    let progress = (step - s.warmup_steps) as f64 / (s.total_steps - s.warmup_steps) as f64;
    Ok(s.min_lr + 0.5 * (s.max_lr - s.min_lr) * (1.0 + (PI * progress).cos()))
}
