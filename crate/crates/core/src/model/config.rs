use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::nn::DropBlockParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    BestEarNet,
    ShuffleNetV2,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::BestEarNet => "Best-EarNet",
            ModelKind::ShuffleNetV2 => "ShuffleNetV2_X0_5",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub num_classes: usize,
    /// 1.0 reproduces the published channel widths.
    pub width_multiplier: f64,
    pub input_size: usize,
    pub dropblock: DropBlockParams,
    /// Groups of the pointwise convolution inside the fusion module.
    pub lgsff_groups: usize,
    pub fhigh_channels: usize,
    pub eca_kernel: usize,
    /// Final 1×1 expansion width of the plain ShuffleNetV2 classifier.
    pub baseline_head_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_classes: 9,
            width_multiplier: 1.0,
            input_size: 224,
            dropblock: DropBlockParams::default(),
            lgsff_groups: 8,
            fhigh_channels: 384,
            eca_kernel: 5,
            baseline_head_channels: 1024,
        }
    }
}

/// Resolved channel widths.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Widths {
    pub stem: usize,
    pub stages: [usize; 3],
    pub fhigh: usize,
    pub baseline_head: usize,
}

pub(crate) const STAGE_REPEATS: [usize; 3] = [4, 8, 4];
const STEM: usize = 24;
const STAGES: [usize; 3] = [48, 96, 192];

impl ModelConfig {
    /// Desk-scale network used for tests and quick experiments.
    pub fn desk() -> Self {
        Self { width_multiplier: 0.25, input_size: 64, ..Self::default() }
    }

    fn scale(&self, c: usize) -> usize {
        let scaled = (c as f64 * self.width_multiplier / 2.0).round() as usize * 2;
        scaled.max(4)
    }

    pub fn widths(&self) -> Widths {
        Widths {
            stem: self.scale(STEM),
            stages: STAGES.map(|c| self.scale(c)),
            fhigh: self.scale(self.fhigh_channels),
            baseline_head: self.scale(self.baseline_head_channels),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(config_err!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return Err(config_err!("input size must be a positive multiple of 32, got {}", self.input_size));
        }
        if !(self.width_multiplier > 0.0) {
            return Err(config_err!("width multiplier must be positive"));
        }
        if self.eca_kernel % 2 == 0 {
            return Err(config_err!("ECA kernel must be odd, got {}", self.eca_kernel));
        }
        self.dropblock.validate()?;
        let w = self.widths();
        if self.lgsff_groups == 0 || w.fhigh % self.lgsff_groups != 0 {
            return Err(config_err!(
                "fusion width {} is not divisible by {} groups",
                w.fhigh,
                self.lgsff_groups
            ));
        }
        Ok(())
    }

    /// Spatial extent after the stem (÷4) and after each stage (÷2 each).
    pub fn spatial(&self) -> [usize; 4] {
        let s = self.input_size / 4;
        [s, s / 2, s / 4, s / 8]
    }
}
