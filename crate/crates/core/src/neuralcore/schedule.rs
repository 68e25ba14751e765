use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step decay: `base_lr · decay_factor^floor(epoch / period_epochs)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub decay_factor: f64,
    pub period_epochs: usize,
    pub total_epochs: usize,
}

impl LrSchedule {
    /// 1e-4, ×0.7 every 20 epochs, 100 epochs.
    pub const CONTACT: LrSchedule = LrSchedule {
        base_lr: 1e-4,
        decay_factor: 0.7,
        period_epochs: 20,
        total_epochs: 100,
    };

    /// 1e-5, ×0.7 every 200 epochs, 600 epochs.
    pub const ACTION: LrSchedule = LrSchedule {
        base_lr: 1e-5,
        decay_factor: 0.7,
        period_epochs: 200,
        total_epochs: 600,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Validation(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Validation(format!(
                "decay_factor must be in (0,1], got {}",
                self.decay_factor
            )));
        }
        if self.period_epochs == 0 {
            return Err(Error::Validation("period_epochs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        self.validate()?;
        if epoch >= self.total_epochs {
            return Err(Error::Validation(format!(
                "epoch {epoch} outside schedule of {} epochs",
                self.total_epochs
            )));
        }
        let decays = (epoch / self.period_epochs) as i32;
        Ok(self.base_lr * self.decay_factor.powi(decays))
    }
}
