//! Optimisation loop: stratified split, SGD with momentum and weight decay,
//! early stopping with best-weights restoration.

mod history;
mod optim;
mod split;
mod stage;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use history::{EpochRecord, TrainHistory, HISTORY_HEADER};
pub use optim::{sgd_step, sgd_update, EarlyStopping, StopCheck};
pub use split::stratified_split;
pub use stage::{
    prepare_stage, train_cascade, train_stage, train_stage_with, CascadeTraining, DataMonitor,
    Progress, Stage, StageData, ValidationMonitor,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub patience: usize,
    pub dropout_rate: f64,
    pub momentum: f64,
    pub split_ratio: f64,
    /// Smallest validation-loss drop that counts as an improvement.
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            max_epochs: 20,
            batch_size: 8,
            learning_rate: 1e-5,
            weight_decay: 1e-4,
            patience: 5,
            dropout_rate: 0.2,
            momentum: 0.9,
            split_ratio: 0.8,
            min_delta: 1e-6,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            ));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad(format!(
                "split_ratio must lie in (0, 1), got {}",
                self.split_ratio
            ));
        }
        if !(self.min_delta >= 0.0 && self.min_delta.is_finite()) {
            return bad(format!(
                "min_delta must be non-negative, got {}",
                self.min_delta
            ));
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        Ok(())
    }
}
