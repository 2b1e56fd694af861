use hifreq_core::{DepthMap, SceneSpec, Tensor};

use crate::config::{ResidualScale, ShadingNorm};
use crate::TrainError;

/// One rendered scene with its simulated measurements.
#[derive(Debug, Clone)]
pub struct Sample {
    pub scene_id: String,
    pub shading: Tensor,
    pub lowfreq: DepthMap,
    pub pattern: Tensor,
    pub gt: DepthMap,
    pub scene: Option<SceneSpec>,
}

/// Network input for a whole sample.
#[derive(Debug, Clone)]
pub struct Input {
    /// `3 x H x W`: shading, standardized low-frequency depth, pattern.
    pub x: Tensor<f32>,
    /// `1 x H x W` target, zero outside the mask.
    pub y: Tensor<f32>,
    /// `1 x H x W` in {0, 1}.
    pub mask: Tensor<f32>,
    pub mean: f64,
    pub sigma: f64,
    /// Millimeters per target unit.
    pub scale: f64,
}

impl Sample {
    pub fn width(&self) -> usize {
        self.gt.width()
    }

    pub fn height(&self) -> usize {
        self.gt.height()
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let shape = [self.height(), self.width()];
        for (name, t) in [
            ("shading", &self.shading),
            ("pattern", &self.pattern),
            ("lowfreq", self.lowfreq.depth()),
        ] {
            if t.shape() != shape {
                return Err(TrainError::DegenerateImage(format!(
                    "{}: {name} is {:?}, ground truth is {shape:?}",
                    self.scene_id,
                    t.shape()
                )));
            }
        }
        if self.lowfreq.mask() != self.gt.mask() {
            return Err(TrainError::DegenerateImage(format!(
                "{}: low-frequency and ground-truth masks differ",
                self.scene_id
            )));
        }
        Ok(())
    }
}

fn masked_stats(values: &Tensor, mask: &Tensor) -> (f64, f64, usize) {
    let mut n = 0usize;
    let mut sum = 0.0;
    for (&v, &m) in values.data().iter().zip(mask.data()) {
        if m == 1.0 {
            n += 1;
            sum += v;
        }
    }
    if n == 0 {
        return (0.0, 0.0, 0);
    }
    let mean = sum / n as f64;
    let var = values
        .data()
        .iter()
        .zip(mask.data())
        .filter(|(_, &m)| m == 1.0)
        .map(|(&v, _)| (v - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    (mean, var.sqrt(), n)
}

/// Builds the three input channels, the residual target and the loss mask.
pub fn make_input(
    s: &Sample,
    norm: ShadingNorm,
    scale: ResidualScale,
) -> Result<Input, TrainError> {
    s.validate()?;
    let (h, w) = (s.height(), s.width());
    let mask = s.lowfreq.mask();
    let degenerate = |m: &str| TrainError::DegenerateImage(format!("{}: {m}", s.scene_id));

    let (mean, sigma, n) = masked_stats(s.lowfreq.depth(), mask);
    if n == 0 || sigma <= 0.0 {
        return Err(degenerate("low-frequency depth has zero spread"));
    }
    let shading: Vec<f64> = match norm {
        ShadingNorm::Max => {
            let max = s.shading.max();
            if max <= 0.0 {
                return Err(degenerate("shading is zero"));
            }
            s.shading.data().iter().map(|v| v / max).collect()
        }
        ShadingNorm::Standardize => {
            let (mu, sd, _) = masked_stats(&s.shading, mask);
            if sd <= 0.0 {
                return Err(degenerate("shading is constant"));
            }
            s.shading
                .data()
                .iter()
                .zip(mask.data())
                .map(|(v, &m)| if m == 1.0 { (v - mu) / sd } else { 0.0 })
                .collect()
        }
    };
    let pmax = s.pattern.max();
    let unit = match scale {
        ResidualScale::LowfreqSigma => sigma,
        ResidualScale::Millimeters => 1.0,
    };

    let plane = h * w;
    let mut x = vec![0f32; 3 * plane];
    let mut y = vec![0f32; plane];
    let mut m = vec![0f32; plane];
    let (lf, gt) = (s.lowfreq.depth().data(), s.gt.depth().data());
    for i in 0..plane {
        x[i] = shading[i] as f32;
        if pmax > 0.0 {
            x[2 * plane + i] = (s.pattern.data()[i] / pmax) as f32;
        }
        if mask.data()[i] == 1.0 {
            x[plane + i] = ((lf[i] - mean) / sigma) as f32;
            y[i] = ((gt[i] - lf[i]) / unit) as f32;
            m[i] = 1.0;
        }
    }
    Ok(Input {
        x: Tensor::from_vec(&[3, h, w], x)?,
        y: Tensor::from_vec(&[1, h, w], y)?,
        mask: Tensor::from_vec(&[1, h, w], m)?,
        mean,
        sigma,
        scale: unit,
    })
}
