use serde::{Deserialize, Serialize};

use crate::TrainError;

/// Normalization of the shading channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShadingNorm {
    /// Divide by the image maximum.
    #[default]
    Max,
    /// Zero mean, unit variance over the mask.
    Standardize,
}

/// Units of the regression target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualScale {
    /// Residual divided by the low-frequency depth's standard deviation.
    #[default]
    LowfreqSigma,
    /// Residual in millimeters.
    Millimeters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub patch: usize,
    pub val_fraction: f64,
    /// Luminance scale range; `[1, 1]` disables augmentation.
    pub lum_aug: [f64; 2],
    pub seed: u64,
    /// Base channel count of the network.
    pub width: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub shading_norm: ShadingNorm,
    pub residual_scale: ResidualScale,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            lr: 1e-3,
            batch: 8,
            patch: 120,
            val_fraction: 0.3,
            lum_aug: [0.5, 1.5],
            seed: 0,
            width: hifreq_unet::DEFAULT_WIDTH,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            shading_norm: ShadingNorm::Max,
            residual_scale: ResidualScale::LowfreqSigma,
        }
    }
}

impl TrainConfig {
    /// Fine-tuning schedule: 50 epochs at lr 1e-4.
    pub fn finetune() -> Self {
        Self {
            epochs: 50,
            lr: 1e-4,
            ..Self::default()
        }
    }

    /// Narrower network for 240 x 240 desk scenes.
    pub fn desk() -> Self {
        Self {
            width: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::BadConfig(m));
        if self.patch == 0 || self.patch % hifreq_unet::SIZE_MULTIPLE != 0 {
            return bad(format!("patch {} must be a positive multiple of 8", self.patch));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction {} must lie in (0, 1)", self.val_fraction));
        }
        if self.batch == 0 || self.width == 0 {
            return bad("batch and width must be positive".into());
        }
        let [lo, hi] = self.lum_aug;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("luminance range {lo}..{hi} is invalid"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} is invalid", self.lr));
        }
        Ok(())
    }

    pub(crate) fn adam(&self) -> hifreq_unet::AdamConfig {
        hifreq_unet::AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}
