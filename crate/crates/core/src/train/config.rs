use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::AugmentParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Skip weight decay on batch-norm scales/shifts and graph gates.
    pub exempt_norm_and_gates: bool,
    pub batch_size: usize,
    /// Epochs at which the learning rate is divided by 10.
    pub milestones: Vec<usize>,
    pub total_epochs: usize,
    pub seed: u64,
    pub augment: AugmentParams,
    /// Evaluate on the held-out set after every epoch when one is given.
    pub eval_every_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            exempt_norm_and_gates: false,
            batch_size: 32,
            milestones: vec![30, 40],
            total_epochs: 50,
            seed: 0,
            augment: AugmentParams::default(),
            eval_every_epoch: true,
        }
    }
}

impl TrainConfig {
    /// NTU RGB+D recipe: 0.01, divided by 10 at epochs 30 and 40, 50 epochs.
    pub fn ntu() -> Self {
        Self::default()
    }

    /// Kinetics recipe: 0.01, divided by 10 at epochs 45 and 55, 65 epochs.
    pub fn kinetics() -> Self {
        Self {
            milestones: vec![45, 55],
            total_epochs: 65,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return fail(format!("milestones {:?} must be strictly increasing", self.milestones));
        }
        if self.milestones.last().is_some_and(|&m| m >= self.total_epochs) {
            return fail(format!(
                "milestones {:?} must precede total_epochs {}",
                self.milestones, self.total_epochs
            ));
        }
        for (what, v) in [
            ("base_lr", self.base_lr),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{what} must be finite and non-negative, got {v}"));
            }
        }
        let a = &self.augment;
        if !(a.max_rot_deg.is_finite() && a.max_rot_deg >= 0.0 && a.max_trans.is_finite() && a.max_trans >= 0.0) {
            return fail(format!("invalid augmentation {a:?}"));
        }
        Ok(())
    }
}

/// `base_lr / 10^(number of milestones ≤ epoch)`.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    let drops = cfg.milestones.iter().filter(|&&m| m <= epoch).count();
    cfg.base_lr / 10f64.powi(drops as i32)
}
