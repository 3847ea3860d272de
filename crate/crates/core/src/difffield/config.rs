use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Avatar training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_geo: f64,
    pub lambda_tex: f64,
    pub lambda_reg: f64,
    /// Scans per optimisation step.
    pub batch_size: usize,
    pub epochs: usize,
    /// Optimisation steps that make up one epoch.
    pub iters_per_epoch: usize,
    /// Epochs at the start during which the warp field is frozen.
    pub warp_freeze_epochs: usize,
    pub lr_template: f64,
    pub lr_warp: f64,
    pub decay_every: usize,
    /// Occupancy samples drawn per scan and step.
    pub points_per_scan: usize,
    /// Rays drawn per scan and step.
    pub rays_per_scan: usize,
    pub samples_per_ray: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_geo: 0.5,
            lambda_tex: 1.0,
            lambda_reg: 0.1,
            batch_size: 4,
            epochs: 30,
            iters_per_epoch: 40,
            warp_freeze_epochs: 2,
            lr_template: 1e-3,
            lr_warp: 1e-4,
            decay_every: 20_000,
            points_per_scan: 256,
            rays_per_scan: 16,
            samples_per_ray: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda_geo, self.lambda_tex, self.lambda_reg].iter().any(|w| !(*w >= 0.0)) {
            return Err(contract("loss weights must be nonnegative"));
        }
        if self.batch_size == 0 {
            return Err(contract("batch size must be at least 1"));
        }
        if self.samples_per_ray < 2 {
            return Err(contract("need at least two samples per ray"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_published_weights() {
        let c = TrainConfig::default();
        assert_eq!((c.lambda_geo, c.lambda_tex, c.lambda_reg), (0.5, 1.0, 0.1));
        assert_eq!((c.batch_size, c.epochs), (4, 30));
        assert_eq!((c.lr_template, c.lr_warp, c.decay_every), (1e-3, 1e-4, 20_000));
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = TrainConfig::default();
        c.lambda_reg = -1.0;
        assert!(c.validate().is_err());
        let c = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
    }
}
