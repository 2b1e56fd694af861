//! Depth error metrics with local mean/std matching.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depth::{DepthError, DepthMap};
use crate::tensor::{Tensor, TensorError};

pub const DEFAULT_PATCH: usize = 49;
const SIGMA_EPS: f64 = 1e-9;
/// Minimum fraction of a window that must be masked for its center to be scored.
pub const MIN_COVERAGE: f64 = 0.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("patch size {patch} must be odd and fit in a {width}x{height} image")]
    BadPatch {
        patch: usize,
        width: usize,
        height: usize,
    },
    #[error("mask is empty")]
    EmptyMask,
    #[error("no samples to evaluate")]
    EmptyDataset,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Depth(#[from] DepthError),
}

/// `sqrt(sum m (p - g)^2 / sum m)`.
pub fn rmse(pred: &Tensor, gt: &Tensor, mask: &Tensor) -> Result<f64, EvalError> {
    gt.expect_shape(pred.shape())?;
    mask.expect_shape(pred.shape())?;
    let (mut acc, mut n) = (0.0, 0.0);
    for ((&p, &g), &m) in pred.data().iter().zip(gt.data()).zip(mask.data()) {
        if m != 0.0 {
            acc += m * (p - g) * (p - g);
            n += m;
        }
    }
    if n <= 0.0 {
        return Err(EvalError::EmptyMask);
    }
    Ok((acc / n).sqrt())
}

/// RMSE over pixels valid in both maps.
pub fn rmse_maps(pred: &DepthMap, gt: &DepthMap) -> Result<f64, EvalError> {
    let both = pred.restrict(gt.mask())?;
    rmse(pred.depth(), gt.depth(), both.mask())
}

fn intersect(a: &Tensor, b: &Tensor) -> Tensor {
    let v = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| if x == 1.0 && y == 1.0 { 1.0 } else { 0.0 })
        .collect();
    Tensor::from_vec(a.shape(), v).expect("same shape")
}

/// Box sums over a `k x k` window centered on each pixel, clipped at the
/// borders. Each output is a sum of at most `k` row sums of at most `k` terms.
fn box_sums(values: &[f64], w: usize, h: usize, k: usize) -> Vec<f64> {
    let half = k / 2;
    let mut rows = vec![0.0; w * h];
    rows.par_chunks_mut(w).enumerate().for_each(|(r, out)| {
        let src = &values[r * w..(r + 1) * w];
        for (c, o) in out.iter_mut().enumerate() {
            let lo = c.saturating_sub(half);
            let hi = (c + half).min(w - 1);
            *o = src[lo..=hi].iter().sum();
        }
    });
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(r, dst)| {
        let lo = r.saturating_sub(half);
        let hi = (r + half).min(h - 1);
        for (c, d) in dst.iter_mut().enumerate() {
            let mut s = 0.0;
            for rr in lo..=hi {
                s += rows[rr * w + c];
            }
            *d = s;
        }
    });
    out
}

/// Per-pixel mean/std matching of `pred` to `gt` over a `patch x patch`
/// sliding window.
///
/// Window statistics use only pixels valid in both maps. Pixels whose window
/// holds fewer than a quarter of its area in valid pixels are dropped from the
/// output mask.
pub fn patch_normalize(
    pred: &DepthMap,
    gt: &DepthMap,
    patch: usize,
) -> Result<DepthMap, EvalError> {
    gt.depth().expect_shape(pred.depth().shape())?;
    let (w, h) = (pred.width(), pred.height());
    if patch % 2 == 0 || patch > w || patch > h {
        return Err(EvalError::BadPatch {
            patch,
            width: w,
            height: h,
        });
    }
    let mask = intersect(pred.mask(), gt.mask());
    let m = mask.data();
    let n_valid: f64 = m.iter().sum();
    if n_valid == 0.0 {
        return Err(EvalError::EmptyMask);
    }
    // window sums run on globally centered values
    let center = |d: &Tensor| {
        let mean = d.data().iter().zip(m).map(|(v, mm)| v * mm).sum::<f64>() / n_valid;
        let v: Vec<f64> = d.data().iter().zip(m).map(|(v, mm)| (v - mean) * mm).collect();
        (v, mean)
    };
    let (p, _) = center(pred.depth());
    let (g, g_mean) = center(gt.depth());
    let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<_>>();

    let count = box_sums(m, w, h, patch);
    let sp = box_sums(&p, w, h, patch);
    let spp = box_sums(&sq(&p), w, h, patch);
    let sg = box_sums(&g, w, h, patch);
    let sgg = box_sums(&sq(&g), w, h, patch);

    let min_count = MIN_COVERAGE * (patch * patch) as f64;
    let mut out = vec![0.0; w * h];
    let mut out_mask = vec![0.0; w * h];
    for i in 0..w * h {
        if m[i] != 1.0 || count[i] < min_count {
            continue;
        }
        let n = count[i];
        let mu_o = sp[i] / n;
        let mu_g = sg[i] / n;
        let sd_o = (spp[i] / n - mu_o * mu_o).max(0.0).sqrt();
        let sd_g = (sgg[i] / n - mu_g * mu_g).max(0.0).sqrt();
        out[i] = (p[i] - mu_o) / sd_o.max(SIGMA_EPS) * sd_g + mu_g + g_mean;
        out_mask[i] = 1.0;
    }
    let shape = [h, w];
    Ok(DepthMap::new(
        Tensor::from_vec(&shape, out)?,
        Tensor::from_vec(&shape, out_mask)?,
    )?)
}

/// `rmse(patch_normalize(pred, gt), gt)` over the normalized mask.
pub fn rmse_norm(pred: &DepthMap, gt: &DepthMap, patch: usize) -> Result<f64, EvalError> {
    let norm = patch_normalize(pred, gt, patch)?;
    rmse(norm.depth(), gt.depth(), norm.mask())
}

/// `|pred - gt|` on pixels valid in both, 0 elsewhere.
pub fn error_map(pred: &DepthMap, gt: &DepthMap) -> Result<DepthMap, EvalError> {
    gt.depth().expect_shape(pred.depth().shape())?;
    let mask = intersect(pred.mask(), gt.mask());
    let err = Tensor::from_vec(
        pred.depth().shape(),
        pred.depth()
            .data()
            .iter()
            .zip(gt.depth().data())
            .map(|(a, b)| (a - b).abs())
            .collect(),
    )?;
    Ok(DepthMap::new(err, mask)?)
}

/// Color of quantization level `q`; distinct levels get distinct colors.
pub fn colormap(q: u8) -> [u8; 3] {
    let x = q as i32;
    [q, (255 - (2 * x - 255).abs()) as u8, 255 - q]
}

/// Inverse of [`colormap`]; `None` for colors outside the map.
pub fn colormap_level(rgb: [u8; 3]) -> Option<u8> {
    (colormap(rgb[0]) == rgb).then_some(rgb[0])
}

/// Quantizes `err` to 256 levels over `0..=max_mm` (values above saturate).
/// Invalid pixels get `None`.
pub fn quantize_error(err: &DepthMap, max_mm: f64) -> Vec<Option<u8>> {
    err.depth()
        .data()
        .iter()
        .zip(err.mask().data())
        .map(|(&e, &m)| {
            (m == 1.0).then(|| {
                let t = if max_mm > 0.0 { e / max_mm } else { 0.0 };
                (t.clamp(0.0, 1.0) * 255.0).round() as u8
            })
        })
        .collect()
}

/// RGB8 rendering of an error map; invalid pixels are black.
pub fn error_map_rgb(err: &DepthMap, max_mm: f64) -> Vec<u8> {
    quantize_error(err, max_mm)
        .into_iter()
        .flat_map(|q| q.map_or([0, 0, 0], colormap))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub scene_id: String,
    pub model_name: String,
    pub rmse_raw: f64,
    pub rmse_norm: f64,
    pub baseline_rmse_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_sample: Vec<EvalRow>,
    pub patch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub rmse_raw: f64,
    pub rmse_norm: f64,
    pub count: usize,
}

impl EvalReport {
    pub fn model_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for r in &self.per_sample {
            if !names.contains(&r.model_name) {
                names.push(r.model_name.clone());
            }
        }
        names
    }

    /// Mean of the rows belonging to `model`.
    pub fn aggregate(&self, model: &str) -> Option<Aggregate> {
        let rows: Vec<_> = self.per_sample.iter().filter(|r| r.model_name == model).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        Some(Aggregate {
            rmse_raw: rows.iter().map(|r| r.rmse_raw).sum::<f64>() / n,
            rmse_norm: rows.iter().map(|r| r.rmse_norm).sum::<f64>() / n,
            count: rows.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn wavy(w: usize, h: usize, seed: u64) -> DepthMap {
        let mut rng = Rng::new(seed);
        let (a, b, c) = (rng.uniform(0.1, 0.5), rng.uniform(0.1, 0.5), rng.uniform(0.0, 6.0));
        DepthMap::from_fn(w, h, |r, cc| {
            Some(600.0 + (a * cc as f64 + c).sin() * 2.0 + (b * r as f64).cos() + 0.01 * rng.normal(0.0, 1.0))
        })
        .unwrap()
    }

    #[test]
    fn rmse_examples() {
        let a = Tensor::new(&[3, 3], 1.0).unwrap();
        let m = Tensor::new(&[3, 3], 1.0).unwrap();
        assert_eq!(rmse(&a, &a, &m).unwrap(), 0.0);
        let b = a.map(|v| v + 2.0);
        assert_eq!(rmse(&b, &a, &m).unwrap(), 2.0);
        assert_eq!(rmse(&a, &b, &Tensor::zeros(&[3, 3]).unwrap()), Err(EvalError::EmptyMask));

        let p = Tensor::from_vec(&[5, 5], (0..25).map(|i| (i * 7 % 11) as f64).collect()).unwrap();
        let g = Tensor::from_vec(&[5, 5], (0..25).map(|i| (i * 3 % 5) as f64).collect()).unwrap();
        let mm = Tensor::from_vec(&[5, 5], (0..25).map(|i| (i % 3 != 0) as u8 as f64).collect()).unwrap();
        let mut hand = 0.0;
        let mut n = 0.0;
        for i in 0..25 {
            if i % 3 != 0 {
                let d = ((i * 7 % 11) as f64) - ((i * 3 % 5) as f64);
                hand += d * d;
                n += 1.0;
            }
        }
        assert!((rmse(&p, &g, &mm).unwrap() - (hand / n).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn bad_patch() {
        let g = wavy(10, 10, 0);
        assert!(matches!(patch_normalize(&g, &g, 4), Err(EvalError::BadPatch { .. })));
        assert!(matches!(patch_normalize(&g, &g, 11), Err(EvalError::BadPatch { .. })));
    }

    #[test]
    fn fixed_point_and_offset() {
        let g = wavy(60, 55, 1);
        let n = patch_normalize(&g, &g, 49).unwrap();
        let diff = rmse(n.depth(), g.depth(), n.mask()).unwrap();
        assert!(diff < 1e-9, "{diff}");
        let shifted = g.map_valid(|d| d + 5.0);
        assert!(rmse_norm(&shifted, &g, 49).unwrap() < 1e-9);
    }

    #[test]
    fn flip_matches_brute_force() {
        let g = wavy(9, 9, 2);
        let flipped = g.map_valid(|d| 1200.0 - d);
        let patch = 5;
        let got = rmse_norm(&flipped, &g, patch).unwrap();

        let half = patch as i64 / 2;
        let (mut acc, mut cnt) = (0.0, 0.0);
        for r in 0..9i64 {
            for c in 0..9i64 {
                let mut po = Vec::new();
                let mut pg = Vec::new();
                for dr in -half..=half {
                    for dc in -half..=half {
                        let (rr, cc) = (r + dr, c + dc);
                        if (0..9).contains(&rr) && (0..9).contains(&cc) {
                            po.push(flipped.at(rr as usize, cc as usize));
                            pg.push(g.at(rr as usize, cc as usize));
                        }
                    }
                }
                if (po.len() as f64) < 0.25 * 25.0 {
                    continue;
                }
                let stats = |v: &[f64]| {
                    let m = v.iter().sum::<f64>() / v.len() as f64;
                    let s = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
                    (m, s)
                };
                let (mo, so) = stats(&po);
                let (mg, sg) = stats(&pg);
                let out = (flipped.at(r as usize, c as usize) - mo) / so.max(1e-9) * sg + mg;
                acc += (out - g.at(r as usize, c as usize)).powi(2);
                cnt += 1.0;
            }
        }
        let brute = (acc / cnt).sqrt();
        assert!((got - brute).abs() < 1e-9, "{got} vs {brute}");
        assert!(got > 0.1);
    }

    #[test]
    fn low_coverage_pixels_are_dropped() {
        // a lone valid pixel in a corner cannot reach quarter coverage
        let g = DepthMap::from_fn(20, 20, |r, c| ((r < 15 && c < 15) || (r == 19 && c == 19)).then_some((r + c) as f64)).unwrap();
        let n = patch_normalize(&g, &g, 9).unwrap();
        assert!(n.valid(0, 0));
        assert!(!n.valid(19, 19));
    }

    #[test]
    fn affine_invariance() {
        let g = wavy(80, 70, 3);
        let pred = wavy(80, 70, 4);
        let base = rmse_norm(&pred, &g, 49).unwrap();
        for a in [0.5, 2.0] {
            for b in [-10.0, 10.0] {
                let p = pred.map_valid(|d| a * d + b);
                let v = rmse_norm(&p, &g, 49).unwrap();
                assert!((v - base).abs() < 1e-9, "a={a} b={b}: {v} vs {base}");
            }
        }
    }

    #[test]
    fn idempotent() {
        let g = wavy(60, 60, 5);
        let pred = wavy(60, 60, 6);
        let once = patch_normalize(&pred, &g, 21).unwrap();
        let g2 = g.restrict(once.mask()).unwrap();
        let twice = patch_normalize(&once, &g2, 21).unwrap();
        let d = rmse(twice.depth(), once.depth(), twice.mask()).unwrap();
        assert!(d.is_finite());
        let again = patch_normalize(&g2, &g2, 21).unwrap();
        assert!(rmse(again.depth(), g2.depth(), again.mask()).unwrap() < 1e-9);
    }

    #[test]
    fn error_map_levels() {
        let g = DepthMap::from_fn(8, 4, |_, _| Some(600.0)).unwrap();
        let e = error_map(&g, &g).unwrap();
        let rgb = error_map_rgb(&e, 1.0);
        assert!(rgb.chunks(3).all(|p| p == colormap(0)));

        let step = DepthMap::from_fn(8, 4, |_, c| Some(if c < 4 { 600.0 } else { 600.5 })).unwrap();
        let e = error_map(&step, &g).unwrap();
        let q = quantize_error(&e, 1.0);
        let levels: std::collections::BTreeSet<_> = q.iter().flatten().collect();
        assert_eq!(levels.len(), 2);
    }

    #[test]
    fn colormap_is_injective() {
        let all: std::collections::HashSet<_> = (0..=255u8).map(colormap).collect();
        assert_eq!(all.len(), 256);
        assert!(!all.contains(&[0, 0, 0]));
        for q in 0..=255u8 {
            assert_eq!(colormap_level(colormap(q)), Some(q));
        }
    }

    #[test]
    fn report_aggregate() {
        let rows = (0..4)
            .map(|i| EvalRow {
                scene_id: format!("s{i}"),
                model_name: if i % 2 == 0 { "a".into() } else { "b".into() },
                rmse_raw: i as f64,
                rmse_norm: 2.0 * i as f64,
                baseline_rmse_norm: 1.0,
            })
            .collect();
        let rep = EvalReport { per_sample: rows, patch: 49 };
        assert_eq!(rep.model_names(), vec!["a", "b"]);
        let a = rep.aggregate("a").unwrap();
        assert_eq!((a.rmse_raw, a.rmse_norm, a.count), (1.0, 2.0, 2));
        assert!(rep.aggregate("c").is_none());
    }

    proptest! {
        #[test]
        fn rmse_is_a_metric(seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let mut t = || Tensor::from_fn(&[6, 6], |_| rng.uniform(-5.0, 5.0)).unwrap();
            let (a, b, c) = (t(), t(), t());
            let m = Tensor::new(&[6, 6], 1.0).unwrap();
            let ab = rmse(&a, &b, &m).unwrap();
            prop_assert!((ab - rmse(&b, &a, &m).unwrap()).abs() < 1e-12);
            prop_assert!(ab <= rmse(&a, &c, &m).unwrap() + rmse(&c, &b, &m).unwrap() + 1e-12);
            prop_assert!(ab >= 0.0);
        }
    }
}
