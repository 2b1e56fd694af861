use hifreq_core::{Rng, Tensor};

use crate::sample::Input;
use crate::TrainError;

/// Patches with less masked area than this fraction are dropped.
pub const MIN_PATCH_COVERAGE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    /// `3 x p x p`.
    pub x: Tensor<f32>,
    /// `1 x p x p`.
    pub y: Tensor<f32>,
    pub mask: Tensor<f32>,
    /// Index of the source sample.
    pub sample: usize,
    /// Top-left pixel `(row, col)` in the source.
    pub origin: (usize, usize),
}

fn crop(t: &Tensor<f32>, r0: usize, c0: usize, p: usize) -> Tensor<f32> {
    let (ch, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let mut out = Vec::with_capacity(ch * p * p);
    for c in 0..ch {
        for r in r0..r0 + p {
            let base = (c * h + r) * w + c0;
            out.extend_from_slice(&t.data()[base..base + p]);
        }
    }
    Tensor::from_vec(&[ch, p, p], out).expect("crop inside image")
}

/// Non-overlapping `patch x patch` tiles from the top-left corner; partial
/// tiles at the right and bottom edges and tiles under half covered are skipped.
pub fn extract_patches(input: &Input, patch: usize, sample: usize) -> Result<Vec<Patch>, TrainError> {
    let (h, w) = (input.y.shape()[1], input.y.shape()[2]);
    if patch == 0 || patch > h || patch > w {
        return Err(TrainError::PatchTooLarge { patch, width: w, height: h });
    }
    let mut out = Vec::new();
    for r0 in (0..=h - patch).step_by(patch) {
        for c0 in (0..=w - patch).step_by(patch) {
            let mask = crop(&input.mask, r0, c0, patch);
            let covered = mask.data().iter().filter(|&&m| m == 1.0).count();
            if (covered as f64) < MIN_PATCH_COVERAGE * (patch * patch) as f64 {
                continue;
            }
            out.push(Patch {
                x: crop(&input.x, r0, c0, patch),
                y: crop(&input.y, r0, c0, patch),
                mask,
                sample,
                origin: (r0, c0),
            });
        }
    }
    Ok(out)
}

/// Scales the shading and pattern channels of a `3 x H x W` input by one
/// draw from `range`; returns the new input and the factor.
pub fn augment_luminance(x: &Tensor<f32>, rng: &mut Rng, range: [f64; 2]) -> (Tensor<f32>, f64) {
    let s = rng.uniform(range[0], range[1]);
    (scale_luminance(x, s as f32), s)
}

pub(crate) fn scale_luminance(x: &Tensor<f32>, s: f32) -> Tensor<f32> {
    let mut out = x.clone();
    if s != 1.0 {
        let plane = x.shape()[1] * x.shape()[2];
        let (shading, rest) = out.data_mut().split_at_mut(plane);
        for v in shading.iter_mut().chain(rest[plane..2 * plane].iter_mut()) {
            *v *= s;
        }
    }
    out
}

/// Network-ready batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor<f32>,
    pub y: Tensor<f32>,
    pub mask: Tensor<f32>,
}

/// Stacks patches into `B x C x p x p` tensors, applying per-patch luminance factors.
pub fn stack_patches(patches: &[&Patch], scales: Option<&[f32]>) -> Batch {
    let p = patches[0].y.shape()[1];
    let b = patches.len();
    let mut x = Vec::with_capacity(b * 3 * p * p);
    let mut y = Vec::with_capacity(b * p * p);
    let mut mask = Vec::with_capacity(b * p * p);
    for (i, pt) in patches.iter().enumerate() {
        match scales {
            Some(s) => x.extend_from_slice(scale_luminance(&pt.x, s[i]).data()),
            None => x.extend_from_slice(pt.x.data()),
        }
        y.extend_from_slice(pt.y.data());
        mask.extend_from_slice(pt.mask.data());
    }
    Batch {
        x: Tensor::from_vec(&[b, 3, p, p], x).expect("stacked"),
        y: Tensor::from_vec(&[b, 1, p, p], y).expect("stacked"),
        mask: Tensor::from_vec(&[b, 1, p, p], mask).expect("stacked"),
    }
}
