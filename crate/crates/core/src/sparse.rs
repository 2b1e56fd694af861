//! Simulated one-shot structured-light measurement and thin-plate-spline
//! densification.

use std::collections::HashSet;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depth::DepthMap;
use crate::geometry::Vec3;
use crate::raster::PinholeDevice;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SparseError {
    #[error("no pixel is both valid and lit")]
    NoSamples,
    #[error("pattern image {got:?} does not match depth map {expected:?}")]
    SizeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("stride must be >= 1")]
    BadStride,
    #[error("rays are parallel")]
    ParallelRays,
    #[error("camera and projector centers coincide")]
    NearDegenerate,
    #[error("interpolation system is singular: {0}")]
    SingularSystem(String),
    #[error("malformed sparse depth table at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseSample {
    /// Camera column, px.
    pub u: f64,
    /// Camera row, px.
    pub v: f64,
    /// mm.
    pub depth: f64,
}

/// Depth measured at scattered camera pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDepth {
    pub samples: Vec<SparseSample>,
    /// `(width, height)` of the camera image the samples come from.
    pub source_res: (usize, usize),
}

impl SparseDepth {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `# width height` header, then one `u v depth` line per sample.
    pub fn to_text(&self) -> String {
        let mut out = format!("# {} {}\n", self.source_res.0, self.source_res.1);
        for s in &self.samples {
            let _ = writeln!(out, "{} {} {}", s.u, s.v, s.depth);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, SparseError> {
        let mut lines = text.lines().enumerate();
        let parse_err = |line: usize, reason: &str| SparseError::Parse {
            line: line + 1,
            reason: reason.to_string(),
        };
        let (_, header) = lines.next().ok_or_else(|| parse_err(0, "empty input"))?;
        let dims: Vec<usize> = header
            .strip_prefix('#')
            .ok_or_else(|| parse_err(0, "missing '# width height' header"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| parse_err(0, "bad resolution")))
            .collect::<Result<_, _>>()?;
        if dims.len() != 2 {
            return Err(parse_err(0, "expected width and height"));
        }
        let mut samples = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| parse_err(i, "bad number")))
                .collect::<Result<_, _>>()?;
            if vals.len() != 3 {
                return Err(parse_err(i, "expected 'u v depth'"));
            }
            samples.push(SparseSample {
                u: vals[0],
                v: vals[1],
                depth: vals[2],
            });
        }
        Ok(Self {
            samples,
            source_res: (dims[0], dims[1]),
        })
    }
}

/// Keeps every `stride`-th pixel, in row-major order, among those that are
/// valid in `depth_gt` and lit (`> 0.5`) in `pattern_cam`, and perturbs its
/// depth with Gaussian noise.
pub fn sample_sparse(
    depth_gt: &DepthMap,
    pattern_cam: &Tensor,
    stride: usize,
    noise_sigma: f64,
    rng: &mut Rng,
) -> Result<SparseDepth, SparseError> {
    if stride == 0 {
        return Err(SparseError::BadStride);
    }
    if pattern_cam.shape() != depth_gt.depth().shape() {
        return Err(SparseError::SizeMismatch {
            expected: depth_gt.depth().shape().to_vec(),
            got: pattern_cam.shape().to_vec(),
        });
    }
    let w = depth_gt.width();
    let mut samples = Vec::new();
    let mut k = 0usize;
    for (idx, (&m, &p)) in depth_gt
        .mask()
        .data()
        .iter()
        .zip(pattern_cam.data())
        .enumerate()
    {
        if m != 1.0 || p <= 0.5 {
            continue;
        }
        if k % stride == 0 {
            let d = depth_gt.depth().data()[idx];
            let noisy = if noise_sigma > 0.0 {
                rng.normal(d, noise_sigma)
            } else {
                d
            };
            samples.push(SparseSample {
                u: (idx % w) as f64,
                v: (idx / w) as f64,
                depth: noisy,
            });
        }
        k += 1;
    }
    if samples.is_empty() {
        return Err(SparseError::NoSamples);
    }
    Ok(SparseDepth {
        samples,
        source_res: (w, depth_gt.height()),
    })
}

/// Midpoint of the common perpendicular of the camera ray through `cam_px`
/// and the projector ray through `proj_px`, in world coordinates.
pub fn triangulate(
    cam: &PinholeDevice,
    proj: &PinholeDevice,
    cam_px: (f64, f64),
    proj_px: (f64, f64),
) -> Result<Vec3, SparseError> {
    let r1 = cam.ray(cam_px.0, cam_px.1);
    let r2 = proj.ray(proj_px.0, proj_px.1);
    let (d1, d2) = (r1.dir.normalize(), r2.dir.normalize());
    let w0 = r1.origin - r2.origin;
    let b = d1.dot(&d2);
    let denom = 1.0 - b * b;
    if denom.abs() <= 1e-12 {
        return Err(SparseError::ParallelRays);
    }
    if w0.norm() <= 1e-9 {
        return Err(SparseError::NearDegenerate);
    }
    let d = d1.dot(&w0);
    let e = d2.dot(&w0);
    let s = (b * e - d) / denom;
    let t = (e - b * d) / denom;
    Ok((r1.origin + d1 * s + r2.origin + d2 * t) * 0.5)
}

/// Thin-plate spline `phi(r) = r^2 log r`, evaluated from `r^2`.
#[inline]
fn tps_kernel(r2: f64) -> f64 {
    if r2 <= 0.0 {
        0.0
    } else {
        0.5 * r2 * r2.ln()
    }
}

/// `f(u, v) = a + b u + c v + sum_j w_j phi(|(u, v) - center_j|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfModel {
    pub centers: Vec<(f64, f64)>,
    pub weights: Vec<f64>,
    pub affine: [f64; 3],
    pub smoothing: f64,
}

impl RbfModel {
    pub fn eval(&self, u: f64, v: f64) -> f64 {
        let [a, b, c] = self.affine;
        let mut acc = a + b * u + c * v;
        for (&(cu, cv), &w) in self.centers.iter().zip(&self.weights) {
            let (du, dv) = (u - cu, v - cv);
            acc += w * tps_kernel(du * du + dv * dv);
        }
        acc
    }

    /// `[sum w, sum w u, sum w v]`, zero for a well-posed fit.
    pub fn side_conditions(&self) -> [f64; 3] {
        self.centers
            .iter()
            .zip(&self.weights)
            .fold([0.0; 3], |[s, su, sv], (&(u, v), &w)| {
                [s + w, su + w * u, sv + w * v]
            })
    }
}

fn non_collinear(points: &[(f64, f64)]) -> bool {
    if points.len() < 3 {
        return false;
    }
    let n = points.len() as f64;
    let (mu, mv) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), &(u, v)| (a + u / n, b + v / n));
    let (mut suu, mut suv, mut svv) = (0.0, 0.0, 0.0);
    for &(u, v) in points {
        let (du, dv) = (u - mu, v - mv);
        suu += du * du;
        suv += du * dv;
        svv += dv * dv;
    }
    // smallest eigenvalue of the scatter matrix relative to the largest
    let tr = suu + svv;
    let det = suu * svv - suv * suv;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let (lmax, lmin) = (tr / 2.0 + disc, tr / 2.0 - disc);
    lmax > 0.0 && lmin > 1e-10 * lmax
}

/// Fits a thin-plate spline with affine term to the samples.
///
/// Solves `[K + smoothing I, P; P^T, 0] [w; a] = [d; 0]` with `P = [1 u v]`.
/// When there are more than `max_centers` samples, a uniform random subset is
/// used as centers.
pub fn rbf_fit(
    s: &SparseDepth,
    smoothing: f64,
    max_centers: usize,
    rng: &mut Rng,
) -> Result<RbfModel, SparseError> {
    if s.samples.is_empty() {
        return Err(SparseError::NoSamples);
    }
    if !(smoothing >= 0.0) {
        return Err(SparseError::SingularSystem("negative smoothing".into()));
    }
    let mut chosen: Vec<usize> = (0..s.samples.len()).collect();
    if chosen.len() > max_centers.max(3) {
        rng.shuffle(&mut chosen);
        chosen.truncate(max_centers.max(3));
        chosen.sort_unstable();
    }
    let samples: Vec<SparseSample> = chosen.iter().map(|&i| s.samples[i]).collect();
    let centers: Vec<(f64, f64)> = samples.iter().map(|p| (p.u, p.v)).collect();
    if !non_collinear(&centers) {
        return Err(SparseError::SingularSystem(
            "fewer than 3 non-collinear centers".into(),
        ));
    }
    if smoothing == 0.0 {
        let mut seen = HashSet::with_capacity(centers.len());
        for &(u, v) in &centers {
            if !seen.insert((u.to_bits(), v.to_bits())) {
                return Err(SparseError::SingularSystem(format!(
                    "duplicate center ({u}, {v})"
                )));
            }
        }
    }

    let n = centers.len();
    let mean = samples.iter().map(|p| p.depth).sum::<f64>() / n as f64;
    let m = n + 3;
    let mut a = DMatrix::<f64>::zeros(m, m);
    for i in 0..n {
        let (ui, vi) = centers[i];
        for j in 0..i {
            let (du, dv) = (ui - centers[j].0, vi - centers[j].1);
            let k = tps_kernel(du * du + dv * dv);
            a[(i, j)] = k;
            a[(j, i)] = k;
        }
        a[(i, i)] = smoothing;
        for (col, p) in [1.0, ui, vi].into_iter().enumerate() {
            a[(i, n + col)] = p;
            a[(n + col, i)] = p;
        }
    }
    let mut rhs = DVector::<f64>::zeros(m);
    for (i, p) in samples.iter().enumerate() {
        rhs[i] = p.depth - mean;
    }
    let sol = a
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| SparseError::SingularSystem("LU factorization failed".into()))?;
    let residual = (&a * &sol - &rhs).amax();
    let scale = rhs.amax().max(1.0);
    if !residual.is_finite() || residual > 1e-6 * scale {
        return Err(SparseError::SingularSystem(format!(
            "solve residual {residual:e}"
        )));
    }
    Ok(RbfModel {
        centers,
        weights: sol.rows(0, n).iter().copied().collect(),
        affine: [sol[n] + mean, sol[n + 1], sol[n + 2]],
        smoothing,
    })
}

/// Evaluates the model at every pixel of `roi` with value 1.
pub fn rbf_eval(model: &RbfModel, roi: &Tensor) -> DepthMap {
    let (h, w) = (roi.shape()[0], roi.shape()[1]);
    let mut depth = vec![0.0; h * w];
    depth
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(r, row)| {
            for (c, d) in row.iter_mut().enumerate() {
                if roi.data()[r * w + c] == 1.0 {
                    *d = model.eval(c as f64, r as f64);
                }
            }
        });
    let depth = Tensor::from_vec(&[h, w], depth).expect("shape");
    DepthMap::new(depth, roi.clone()).expect("finite model")
}

/// Sparse sampling and densification settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SparseConfig {
    pub stride: usize,
    pub noise_mm: f64,
    pub smoothing: f64,
    pub max_centers: usize,
}

impl Default for SparseConfig {
    fn default() -> Self {
        Self {
            stride: 4,
            noise_mm: 0.05,
            smoothing: 1e-3,
            max_centers: 2000,
        }
    }
}

/// Samples `depth_gt` under the lit pattern and densifies it over the
/// ground-truth mask.
pub fn low_frequency_depth(
    depth_gt: &DepthMap,
    pattern_cam: &Tensor,
    cfg: &SparseConfig,
    rng: &mut Rng,
) -> Result<(SparseDepth, DepthMap), SparseError> {
    let sparse = sample_sparse(depth_gt, pattern_cam, cfg.stride, cfg.noise_mm, rng)?;
    let model = rbf_fit(&sparse, cfg.smoothing, cfg.max_centers, rng)?;
    let dense = rbf_eval(&model, depth_gt.mask());
    Ok((sparse, dense))
}
