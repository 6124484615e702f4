//! Patience-based early stopping on a maximised metric.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Stop,
}

/// A value counts as an improvement only if it exceeds the best so far by
/// more than `min_delta`; ties and NaN never reset the counter.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopState {
    pub best_value: f64,
    /// 1-based epoch of the best value; 0 before any update.
    pub best_epoch: usize,
    pub epochs_since_improvement: usize,
    pub last_epoch: usize,
    pub patience: usize,
    pub min_delta: f64,
}

impl EarlyStopState {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            best_value: f64::NEG_INFINITY,
            best_epoch: 0,
            epochs_since_improvement: 0,
            last_epoch: 0,
            patience,
            min_delta,
        }
    }

    /// Feeds the metric of `epoch` (1-based, strictly increasing).
    pub fn update(&mut self, value: f64, epoch: usize) -> Result<Decision> {
        if epoch <= self.last_epoch {
            return Err(Error::Usage(format!(
                "epoch {epoch} arrived after epoch {}",
                self.last_epoch
            )));
        }
        self.last_epoch = epoch;
        if value > self.best_value + self.min_delta {
            self.best_value = value;
            self.best_epoch = epoch;
            self.epochs_since_improvement = 0;
        } else {
            self.epochs_since_improvement += 1;
        }
        Ok(self.decision())
    }

    pub fn improved_at(&self, epoch: usize) -> bool {
        self.best_epoch == epoch
    }

    pub fn decision(&self) -> Decision {
        if self.patience > 0 && self.epochs_since_improvement >= self.patience {
            Decision::Stop
        } else {
            Decision::Continue
        }
    }
}
