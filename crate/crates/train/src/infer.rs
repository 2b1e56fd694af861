use hifreq_core::{DepthMap, Tensor};
use hifreq_unet::UNet;

use crate::config::TrainConfig;
use crate::sample::{make_input, Sample};
use crate::TrainError;

/// Low-frequency depth plus the predicted residual, at full resolution.
pub fn infer(model: &UNet<f32>, sample: &Sample, cfg: &TrainConfig) -> Result<DepthMap, TrainError> {
    let input = make_input(sample, cfg.shading_norm, cfg.residual_scale)?;
    let (h, w) = (sample.height(), sample.width());
    let x = input.x.reshape(&[1, 3, h, w])?;
    let out = model.forward(&x)?;
    let lf = sample.lowfreq.depth().data();
    let mask = sample.lowfreq.mask();
    let depth: Vec<f64> = out
        .data()
        .iter()
        .zip(lf)
        .zip(mask.data())
        .map(|((&r, &d), &m)| if m == 1.0 { d + input.scale * r as f64 } else { 0.0 })
        .collect();
    Ok(DepthMap::new(Tensor::from_vec(&[h, w], depth)?, mask.clone())?)
}
