use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BTConfig {
    pub batch_size: usize,
    pub lambda: f64,
    pub projector_dims: Vec<usize>,
    pub epochs: usize,
    pub lr_weights: f64,
    pub lr_biases: f64,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub momentum: f64,
    /// LARS trust coefficient.
    pub lars_eta: f64,
    /// Fraction of the dataset held out for the per-epoch validation loss.
    pub val_fraction: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for BTConfig {
    fn default() -> Self {
        Self {
            batch_size: 512,
            lambda: 0.0051,
            projector_dims: vec![8192, 8192, 8192],
            epochs: 100,
            lr_weights: 0.2,
            lr_biases: 0.0048,
            warmup_epochs: 10,
            weight_decay: 1e-6,
            momentum: 0.9,
            lars_eta: 0.001,
            val_fraction: 0.1,
            eps: super::objective::DEFAULT_EPS,
            seed: 0,
        }
    }
}

impl BTConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(format!("batch size {} < 2", self.batch_size)));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidConfig(format!("lambda {} must be positive", self.lambda)));
        }
        if self.projector_dims.is_empty() || self.projector_dims.contains(&0) {
            return Err(Error::InvalidConfig(format!("projector dims {:?} must be non-empty and positive", self.projector_dims)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidConfig(format!("val_fraction {} outside [0, 1)", self.val_fraction)));
        }
        Ok(())
    }
}
