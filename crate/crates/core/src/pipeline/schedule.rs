use crate::error::{Error, Result};
use crate::heatmap::DEFAULT_SIGMA;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    /// `(epoch, lr)` pairs: from `epoch` on the rate is `lr`. Strictly
    /// increasing in epoch.
    pub lr_milestones: Vec<(usize, f64)>,
    pub epochs: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            base_lr: 1e-4,
            lr_milestones: vec![(20, 1e-5), (30, 1e-6), (50, 1e-6)],
            epochs: 60,
            sigma: DEFAULT_SIGMA,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if !(self.base_lr > 0.0) || self.lr_milestones.iter().any(|&(_, lr)| !(lr > 0.0)) {
            return Err(Error::InvalidArgument("learning rates must be positive".into()));
        }
        if self.lr_milestones.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::InvalidArgument(format!(
                "milestones must be strictly increasing in epoch: {:?}",
                self.lr_milestones
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidArgument("sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Piecewise-constant learning rate for a zero-based epoch.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr_milestones
        .iter()
        .take_while(|&&(e, _)| e <= epoch)
        .last()
        .map_or(cfg.base_lr, |&(_, lr)| lr)
}
