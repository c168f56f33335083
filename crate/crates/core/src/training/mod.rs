//! Losses, optimizers and training loops.

mod embed;
mod head;
mod optim;
mod supervision;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use embed::{
    loss_embedding, loss_items, train_embedding, EmbedLoss, EmbedTraining, FrameItem, PairSet, TrainPair,
};
pub use head::{feature_normalization, loss_score, train_scorehead, HeadTraining, ScoreLoss};
pub use optim::{Adam, OptimizerKind};
pub use supervision::{checkpoint_weight, CheckpointSupervision};

use crate::error::{Error, Result};

/// Optimization settings shared by the training loops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Items per optimizer step: frame pairs for the embedding, samples for the head.
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Keep every k-th matched frame pair when building embedding batches.
    pub frame_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            frame_stride: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::validation(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.frame_stride == 0 {
            return Err(Error::validation("epochs, batch_size and frame_stride must be positive"));
        }
        Ok(())
    }
}

/// Named loss components per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub names: Vec<String>,
    pub rows: Vec<(usize, Vec<f64>)>,
}

impl LossTrace {
    pub fn new(names: &[&str]) -> Self {
        LossTrace {
            names: names.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, epoch: usize, values: Vec<f64>) {
        debug_assert_eq!(values.len(), self.names.len());
        self.rows.push((epoch, values));
    }

    /// Value of component `name` in the first and last rows.
    pub fn first_last(&self, name: &str) -> Option<(f64, f64)> {
        let k = self.names.iter().position(|n| n == name)?;
        Some((self.rows.first()?.1[k], self.rows.last()?.1[k]))
    }
}

/// One `epoch name=value ...` line per row.
impl fmt::Display for LossTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (epoch, values) in &self.rows {
            write!(f, "{epoch}")?;
            for (n, v) in self.names.iter().zip(values) {
                write!(f, " {n}={v:.9e}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
