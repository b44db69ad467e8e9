use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rule assigning neighbor pairs to adjacency subsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionStrategy {
    /// One subset: every joint and its neighbors.
    Uniform,
    /// Subset `k` holds the pairs at hop distance `k`.
    Distance,
    /// Self, centripetal and centrifugal neighbors by distance to the center.
    Spatial,
}

/// Initial value of the learned global graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearnedGraphInit {
    /// Start at zero and train from the first step.
    Zero,
    /// Start as a copy of the fixed graph and stay frozen for
    /// `ModelConfig::freeze_epochs` epochs.
    CopyFixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub channels: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StcConfig {
    /// Spatial attention kernel along the joint axis.
    pub sam_kernel: usize,
    /// Channel reduction ratio shared by the temporal and channel attention.
    pub reduction: usize,
    /// Taps of the adaptive temporal kernel.
    pub tam_kernel: usize,
}

impl Default for StcConfig {
    fn default() -> Self {
        Self {
            sam_kernel: 9,
            reduction: 4,
            tam_kernel: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub topology: String,
    pub partition: PartitionStrategy,
    pub k_v: usize,
    pub in_channels: usize,
    pub blocks: Vec<BlockSpec>,
    /// Embedding width is `max(1, C_out / embed_divisor)`.
    pub embed_divisor: usize,
    pub stc: StcConfig,
    pub temporal_kernel: usize,
    pub window: usize,
    pub bodies: usize,
    pub num_classes: usize,
    pub learned_graph_init: LearnedGraphInit,
    pub freeze_epochs: usize,
    /// Weight of the current batch in running batch-norm statistics.
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let channels = [64, 64, 64, 128, 128, 128, 256, 256, 256];
        let strides = [1, 1, 1, 2, 1, 1, 2, 1, 1];
        Self {
            topology: "ntu25".into(),
            partition: PartitionStrategy::Spatial,
            k_v: 3,
            in_channels: 3,
            blocks: channels
                .iter()
                .zip(strides)
                .map(|(&channels, stride)| BlockSpec { channels, stride })
                .collect(),
            embed_divisor: 4,
            stc: StcConfig::default(),
            temporal_kernel: 9,
            window: 300,
            bodies: 2,
            num_classes: 60,
            learned_graph_init: LearnedGraphInit::Zero,
            freeze_epochs: 5,
            bn_momentum: 0.1,
        }
    }
}

impl ModelConfig {
    /// The twelve-block variant ending in 512 channels.
    pub fn twelve_block() -> Self {
        let channels = [64, 64, 64, 128, 128, 128, 256, 256, 256, 512, 512, 512];
        let strides = [1, 1, 1, 2, 1, 1, 2, 1, 1, 2, 1, 1];
        Self {
            blocks: channels
                .iter()
                .zip(strides)
                .map(|(&channels, stride)| BlockSpec { channels, stride })
                .collect(),
            ..Self::default()
        }
    }

    pub fn embed_width(&self, c_out: usize) -> usize {
        (c_out / self.embed_divisor).max(1)
    }

    pub fn temporal_padding(&self) -> usize {
        (self.temporal_kernel - 1) / 2
    }

    /// Frames entering each block, followed by the frames leaving the last.
    pub fn block_frames(&self) -> Vec<usize> {
        let pad = self.temporal_padding();
        let mut t = self.window;
        let mut out = vec![t];
        for b in &self.blocks {
            t = (t + 2 * pad).saturating_sub(self.temporal_kernel) / b.stride.max(1) + 1;
            out.push(t);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let ok_pair = match self.partition {
            PartitionStrategy::Uniform => self.k_v == 1,
            PartitionStrategy::Distance => self.k_v >= 2,
            PartitionStrategy::Spatial => self.k_v == 3,
        };
        if !ok_pair {
            return fail(format!(
                "partition {:?} does not support k_v = {}",
                self.partition, self.k_v
            ));
        }
        for (what, v) in [
            ("in_channels", self.in_channels),
            ("window", self.window),
            ("bodies", self.bodies),
            ("num_classes", self.num_classes),
            ("embed_divisor", self.embed_divisor),
            ("stc.reduction", self.stc.reduction),
        ] {
            if v == 0 {
                return fail(format!("{what} must be positive"));
            }
        }
        for (what, k) in [
            ("temporal_kernel", self.temporal_kernel),
            ("stc.sam_kernel", self.stc.sam_kernel),
            ("stc.tam_kernel", self.stc.tam_kernel),
        ] {
            if k % 2 == 0 {
                return fail(format!("{what} must be odd, got {k}"));
            }
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return fail(format!("bn_momentum must lie in (0, 1], got {}", self.bn_momentum));
        }
        let frames = self.block_frames();
        for (i, b) in self.blocks.iter().enumerate() {
            if b.stride != 1 && b.stride != 2 {
                return fail(format!("block {i}: stride must be 1 or 2, got {}", b.stride));
            }
            if b.channels < self.stc.reduction {
                return fail(format!(
                    "block {i}: {} channels is fewer than the reduction ratio {}",
                    b.channels, self.stc.reduction
                ));
            }
            let t = frames[i];
            if t < 4 {
                return fail(format!("block {i} sees {t} frames; temporal attention needs at least 4"));
            }
            if self.temporal_kernel > t + 2 * self.temporal_padding() {
                return fail(format!("block {i}: temporal kernel longer than {t} padded frames"));
            }
        }
        Ok(())
    }
}
