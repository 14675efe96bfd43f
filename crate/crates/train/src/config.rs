use pnl_core::loss::{LawWeights, WingParams};
use serde::{Deserialize, Serialize};

use crate::TrainError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub max_lr: f64,
    /// Learning rate the optimizer is constructed with. The cyclic schedule
    /// sets the rate of every step, including the first.
    pub init_lr: f64,
    pub half_cycle_epochs: usize,
    pub wing: WingParams,
    pub weights: LawWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl TrainConfig {
    /// 30 epochs.
    pub fn toy() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            base_lr: 1e-5,
            max_lr: 5e-4,
            init_lr: 1e-4,
            half_cycle_epochs: 5,
            wing: WingParams::default(),
            weights: LawWeights::default(),
            seed: 0,
        }
    }

    /// 300 epochs.
    pub fn full() -> Self {
        Self { epochs: 300, ..Self::toy() }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 || self.half_cycle_epochs == 0 {
            return bad("batch size and half cycle must be positive".into());
        }
        if !(self.base_lr > 0.0 && self.base_lr < self.max_lr && self.max_lr.is_finite()) {
            return bad(format!("need 0 < base_lr < max_lr, got {} and {}", self.base_lr, self.max_lr));
        }
        if !(self.init_lr > 0.0 && self.init_lr.is_finite()) {
            return bad(format!("init_lr must be positive, got {}", self.init_lr));
        }
        Ok(())
    }

    pub fn iterations_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.batch_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::toy().validate().unwrap();
        assert_eq!(TrainConfig::full().epochs, 300);
        assert!(TrainConfig { base_lr: 1e-3, ..TrainConfig::toy() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..TrainConfig::toy() }.validate().is_err());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: TrainConfig = serde_json::from_str(r#"{"epochs": 3, "seed": 9}"#).unwrap();
        assert_eq!(c, TrainConfig { epochs: 3, seed: 9, ..TrainConfig::toy() });
        assert_eq!(c.iterations_per_epoch(200), 25);
        assert_eq!(c.iterations_per_epoch(201), 26);
    }
}
