//! Procedural wavy surfaces and randomized scene composition.
//!
//! A surface is a height field built from a sum of directional cosines,
//!
//! ```text
//! H(x, y) = sum_i alpha_i * cos(2 pi * x'_i * lambda_i + psi_i),   x'_i = x cos theta_i + y sin theta_i
//! ```
//!
//! with `lambda` a spatial frequency in cycles/mm. The field lives in a local
//! frame whose origin is the surface center; [`ScenePose`] places it in front
//! of the camera.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{RigidTransform, Vec3};
use crate::mesh::TriangleMesh;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("bad sinusoid parameters: {0}")]
    BadParams(String),
    #[error("empty range for {name}: min {min} > max {max}")]
    EmptyRange { name: String, min: f64, max: f64 },
    #[error("height map must be at least 2x2, got {width}x{height}")]
    DegenerateGrid { width: usize, height: usize },
}

/// One directional cosine term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveTerm {
    /// Amplitude, mm.
    pub alpha: f64,
    /// Spatial frequency, cycles/mm.
    pub lambda: f64,
    /// Phase, radians.
    pub psi: f64,
    /// Propagation direction, radians from +x.
    pub theta: f64,
}

impl WaveTerm {
    #[inline]
    fn arg(&self, x: f64, y: f64) -> f64 {
        TAU * (x * self.theta.cos() + y * self.theta.sin()) * self.lambda + self.psi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinusoidParams {
    pub terms: Vec<WaveTerm>,
}

impl SinusoidParams {
    pub fn new(terms: Vec<WaveTerm>) -> Result<Self, SynthError> {
        let p = Self { terms };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.terms.is_empty() {
            return Err(SynthError::BadParams("at least one term required".into()));
        }
        for (i, t) in self.terms.iter().enumerate() {
            if !(t.lambda > 0.0) || !t.lambda.is_finite() {
                return Err(SynthError::BadParams(format!(
                    "term {i}: lambda must be > 0, got {}",
                    t.lambda
                )));
            }
            if !(t.alpha >= 0.0) || !t.alpha.is_finite() {
                return Err(SynthError::BadParams(format!(
                    "term {i}: alpha must be >= 0, got {}",
                    t.alpha
                )));
            }
            if !t.psi.is_finite() || !t.theta.is_finite() {
                return Err(SynthError::BadParams(format!("term {i}: non-finite angle")));
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.terms.len()
    }

    /// Height at local physical coordinates (mm).
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.terms.iter().map(|t| t.alpha * t.arg(x, y).cos()).sum()
    }

    /// `(dH/dx, dH/dy)`.
    pub fn gradient(&self, x: f64, y: f64) -> (f64, f64) {
        self.terms.iter().fold((0.0, 0.0), |(gx, gy), t| {
            let s = -t.alpha * TAU * t.lambda * t.arg(x, y).sin();
            (gx + s * t.theta.cos(), gy + s * t.theta.sin())
        })
    }

    /// Unit normal in the local frame, oriented toward the viewer (negative z).
    pub fn normal(&self, x: f64, y: f64) -> Vec3 {
        let (gx, gy) = self.gradient(x, y);
        Vec3::new(gx, gy, -1.0).normalize()
    }

    pub fn amplitude_sum(&self) -> f64 {
        self.terms.iter().map(|t| t.alpha).sum()
    }
}

/// Height samples on a regular grid. Sample `(r, c)` sits at local
/// `x = (c - (W-1)/2) * pitch`, `y = (r - (H-1)/2) * pitch`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightMap {
    pub values: Tensor,
    /// mm per sample.
    pub pitch: f64,
}

impl HeightMap {
    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn coords(&self, r: usize, c: usize) -> (f64, f64) {
        grid_coords(r, c, self.width(), self.height(), self.pitch)
    }
}

fn grid_coords(r: usize, c: usize, width: usize, height: usize, pitch: f64) -> (f64, f64) {
    (
        (c as f64 - (width as f64 - 1.0) / 2.0) * pitch,
        (r as f64 - (height as f64 - 1.0) / 2.0) * pitch,
    )
}

pub fn height_map(
    params: &SinusoidParams,
    width: usize,
    height: usize,
    pitch: f64,
) -> Result<HeightMap, SynthError> {
    params.validate()?;
    if width < 2 || height < 2 {
        return Err(SynthError::DegenerateGrid { width, height });
    }
    if !(pitch > 0.0) {
        return Err(SynthError::BadParams(format!("pitch must be > 0, got {pitch}")));
    }
    let values = Tensor::from_fn(&[height, width], |i| {
        let (x, y) = grid_coords(i / width, i % width, width, height, pitch);
        params.eval(x, y)
    })
    .expect("nonzero dims");
    Ok(HeightMap { values, pitch })
}

/// Placement of the height field: rotated about its own center, which sits
/// `base_depth` mm in front of the camera on the optical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenePose {
    pub base_depth: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub roll: f64,
}

impl ScenePose {
    pub fn facing(base_depth: f64) -> Self {
        Self {
            base_depth,
            pitch: 0.0,
            yaw: 0.0,
            roll: 0.0,
        }
    }

    /// Local surface frame to world (camera-at-origin) frame.
    pub fn to_world(&self) -> RigidTransform {
        RigidTransform::from_pitch_yaw_roll(
            self.pitch,
            self.yaw,
            self.roll,
            Vec3::new(0.0, 0.0, self.base_depth),
        )
    }
}

/// Regular triangulation of a height map, placed by `pose`.
///
/// Each grid cell `(r, c)` yields triangles `[(r,c), (r+1,c), (r,c+1)]` and
/// `[(r+1,c), (r+1,c+1), (r,c+1)]`; both wind so that a flat map has normals
/// `(0, 0, -1)` before the pose is applied.
pub fn height_map_to_mesh(h: &HeightMap, pose: &ScenePose) -> Result<TriangleMesh, SynthError> {
    let (w, hh) = (h.width(), h.height());
    if w < 2 || hh < 2 {
        return Err(SynthError::DegenerateGrid {
            width: w,
            height: hh,
        });
    }
    let mut positions = Vec::with_capacity(w * hh);
    for r in 0..hh {
        for c in 0..w {
            let (x, y) = h.coords(r, c);
            positions.push(Vec3::new(x, y, h.values.data()[r * w + c]));
        }
    }
    let mut triangles = Vec::with_capacity(2 * (w - 1) * (hh - 1));
    for r in 0..hh - 1 {
        for c in 0..w - 1 {
            let a = (r * w + c) as u32;
            let b = ((r + 1) * w + c) as u32;
            let cc = (r * w + c + 1) as u32;
            let d = ((r + 1) * w + c + 1) as u32;
            triangles.push([a, b, cc]);
            triangles.push([b, d, cc]);
        }
    }
    let mut mesh = TriangleMesh {
        positions,
        normals: Vec::new(),
        triangles,
    };
    mesh.recompute_normals();
    Ok(mesh.transformed(&pose.to_world()))
}

/// Closed interval `[min, max]`, written as a two-element array in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range(pub f64, pub f64);

impl Range {
    pub fn point(v: f64) -> Self {
        Range(v, v)
    }

    pub fn check(&self, name: &str) -> Result<(), SynthError> {
        if !(self.0 <= self.1) {
            return Err(SynthError::EmptyRange {
                name: name.to_string(),
                min: self.0,
                max: self.1,
            });
        }
        Ok(())
    }

    pub fn contains(&self, v: f64) -> bool {
        self.0 <= v && v <= self.1
    }

    pub fn draw(&self, rng: &mut Rng) -> f64 {
        rng.uniform(self.0, self.1)
    }

    pub fn is_disjoint(&self, other: &Range) -> bool {
        self.1 < other.0 || other.1 < self.0
    }
}

/// Directional light confined to a one-sided cone: fixed angle from the
/// optical axis, azimuth drawn from a range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightConfig {
    /// Angle between the light's travel direction and +z, degrees.
    pub elevation_deg: f64,
    /// Azimuth of the travel direction around +z, degrees from +x.
    pub azimuth_deg: Range,
    /// Draw a new azimuth per scene instead of once per dataset.
    pub per_scene: bool,
}

impl Default for LightConfig {
    fn default() -> Self {
        Self {
            elevation_deg: 45.0,
            azimuth_deg: Range(-45.0, 45.0),
            per_scene: false,
        }
    }
}

impl LightConfig {
    pub fn direction(&self, azimuth_deg: f64) -> Vec3 {
        light_direction(self.elevation_deg, azimuth_deg)
    }

    /// Whether `dir` is a unit vector inside the configured cone.
    pub fn admits(&self, dir: &Vec3) -> bool {
        if (dir.norm() - 1.0).abs() > 1e-9 {
            return false;
        }
        let elev = dir.z.clamp(-1.0, 1.0).acos().to_degrees();
        if (elev - self.elevation_deg).abs() > 1e-6 {
            return false;
        }
        if elev.abs() < 1e-9 {
            return true;
        }
        let az = dir.y.atan2(dir.x).to_degrees();
        az >= self.azimuth_deg.0 - 1e-6 && az <= self.azimuth_deg.1 + 1e-6
    }
}

/// Travel direction of a directional light.
pub fn light_direction(elevation_deg: f64, azimuth_deg: f64) -> Vec3 {
    let (e, a) = (elevation_deg.to_radians(), azimuth_deg.to_radians());
    Vec3::new(e.sin() * a.cos(), e.sin() * a.sin(), e.cos())
}

/// Low-frequency multiplicative albedo variation and sensor noise, used to
/// build a shifted target domain. Disabled when `terms == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextureConfig {
    pub terms: usize,
    /// Relative amplitude of each term.
    pub amplitude: Range,
    /// cycles/mm.
    pub lambda_per_mm: Range,
    /// Additive Gaussian noise on shading.
    pub shading_noise: f64,
}

impl Default for TextureConfig {
    fn default() -> Self {
        Self {
            terms: 0,
            amplitude: Range(0.05, 0.15),
            lambda_per_mm: Range(0.01, 0.04),
            shading_noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub terms: usize,
    pub alpha_mm: Range,
    pub lambda_per_mm: Range,
    pub psi_rad: Range,
    pub theta_rad: Range,
    pub base_depth_mm: Range,
    pub pitch_limit_deg: f64,
    pub yaw_limit_deg: f64,
    pub roll_limit_deg: f64,
    pub albedo: Range,
    pub light: LightConfig,
    pub projector_shift_mm: [Range; 3],
    pub texture: TextureConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            terms: 2,
            alpha_mm: Range(0.5, 3.0),
            lambda_per_mm: Range(0.05, 0.5),
            psi_rad: Range(0.0, TAU),
            theta_rad: Range(0.0, PI),
            base_depth_mm: Range::point(600.0),
            pitch_limit_deg: 10.0,
            yaw_limit_deg: 10.0,
            roll_limit_deg: 180.0,
            albedo: Range(0.6, 0.95),
            light: LightConfig::default(),
            projector_shift_mm: [Range(-10.0, 10.0), Range(-10.0, 10.0), Range::point(0.0)],
            texture: TextureConfig::default(),
        }
    }
}

impl SynthConfig {
    /// Ranges sized for the 48 mm desk field.
    pub fn desk() -> Self {
        Self {
            alpha_mm: Range(0.2, 0.5),
            lambda_per_mm: Range(0.05, 0.3),
            projector_shift_mm: [Range(-5.0, 5.0), Range(-5.0, 5.0), Range::point(0.0)],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.terms == 0 {
            return Err(SynthError::BadParams("terms must be >= 1".into()));
        }
        let ranges = [
            ("alpha_mm", self.alpha_mm),
            ("lambda_per_mm", self.lambda_per_mm),
            ("psi_rad", self.psi_rad),
            ("theta_rad", self.theta_rad),
            ("base_depth_mm", self.base_depth_mm),
            ("albedo", self.albedo),
            ("light.azimuth_deg", self.light.azimuth_deg),
            ("projector_shift_mm[0]", self.projector_shift_mm[0]),
            ("projector_shift_mm[1]", self.projector_shift_mm[1]),
            ("projector_shift_mm[2]", self.projector_shift_mm[2]),
            ("texture.amplitude", self.texture.amplitude),
            ("texture.lambda_per_mm", self.texture.lambda_per_mm),
        ];
        for (name, r) in ranges {
            r.check(name)?;
        }
        for (name, lim) in [
            ("pitch_limit_deg", self.pitch_limit_deg),
            ("yaw_limit_deg", self.yaw_limit_deg),
            ("roll_limit_deg", self.roll_limit_deg),
        ] {
            Range(-lim, lim).check(name)?;
        }
        if self.alpha_mm.0 < 0.0 || self.lambda_per_mm.0 <= 0.0 {
            return Err(SynthError::BadParams(
                "alpha must be >= 0 and lambda > 0".into(),
            ));
        }
        if self.albedo.0 <= 0.0 || self.albedo.1 > 1.0 {
            return Err(SynthError::BadParams("albedo must lie in (0, 1]".into()));
        }
        if self.roll_limit_deg > 180.0 {
            return Err(SynthError::BadParams("roll limit exceeds 180 degrees".into()));
        }
        Ok(())
    }
}

/// Everything needed to re-render one training sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub params: SinusoidParams,
    pub pose: ScenePose,
    /// Travel direction of the directional light, unit length.
    pub light_dir: [f64; 3],
    pub albedo: f64,
    pub projector_shift: [f64; 3],
    /// Multiplicative albedo texture terms; amplitudes are relative.
    #[serde(default)]
    pub texture: Vec<WaveTerm>,
    #[serde(default)]
    pub shading_noise: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn light(&self) -> Vec3 {
        Vec3::from(self.light_dir)
    }

    /// Albedo at local surface coordinates.
    pub fn albedo_at(&self, x: f64, y: f64) -> f64 {
        let t: f64 = self.texture.iter().map(|t| t.alpha * t.arg(x, y).cos()).sum();
        (self.albedo * (1.0 + t)).clamp(1e-3, 1.0)
    }
}

/// Draws one scene. Every field is uniform over its configured range; the
/// stream is fully determined by the rng state.
pub fn sample_scene(rng: &mut Rng, cfg: &SynthConfig) -> Result<SceneSpec, SynthError> {
    cfg.validate()?;
    let seed = rng.seed();
    let terms = (0..cfg.terms)
        .map(|_| WaveTerm {
            alpha: cfg.alpha_mm.draw(rng),
            lambda: cfg.lambda_per_mm.draw(rng),
            psi: cfg.psi_rad.draw(rng),
            theta: cfg.theta_rad.draw(rng),
        })
        .collect();
    let pose = ScenePose {
        base_depth: cfg.base_depth_mm.draw(rng),
        pitch: Range(-cfg.pitch_limit_deg, cfg.pitch_limit_deg)
            .draw(rng)
            .to_radians(),
        yaw: Range(-cfg.yaw_limit_deg, cfg.yaw_limit_deg)
            .draw(rng)
            .to_radians(),
        roll: Range(-cfg.roll_limit_deg, cfg.roll_limit_deg)
            .draw(rng)
            .to_radians(),
    };
    let albedo = cfg.albedo.draw(rng);
    let azimuth = cfg.light.azimuth_deg.draw(rng);
    let light = cfg.light.direction(azimuth);
    let projector_shift = [
        cfg.projector_shift_mm[0].draw(rng),
        cfg.projector_shift_mm[1].draw(rng),
        cfg.projector_shift_mm[2].draw(rng),
    ];
    let texture = (0..cfg.texture.terms)
        .map(|_| WaveTerm {
            alpha: cfg.texture.amplitude.draw(rng),
            lambda: cfg.texture.lambda_per_mm.draw(rng),
            psi: rng.uniform(0.0, TAU),
            theta: rng.uniform(0.0, PI),
        })
        .collect();
    Ok(SceneSpec {
        params: SinusoidParams::new(terms)?,
        pose,
        light_dir: [light.x, light.y, light.z],
        albedo,
        projector_shift,
        texture,
        shading_noise: cfg.texture.shading_noise,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn term(alpha: f64, lambda: f64, psi: f64, theta: f64) -> WaveTerm {
        WaveTerm {
            alpha,
            lambda,
            psi,
            theta,
        }
    }

    /// Term-by-term scalar evaluation, written out independently.
    fn oracle(terms: &[WaveTerm], x: f64, y: f64) -> f64 {
        let mut sum = 0.0;
        for t in terms {
            let xp = x * t.theta.cos() + y * t.theta.sin();
            sum += t.alpha * (2.0 * PI * xp * t.lambda + t.psi).cos();
        }
        sum
    }

    #[test]
    fn zero_amplitude_is_flat() {
        let p = SinusoidParams::new(vec![term(0.0, 0.3, 1.0, 0.2), term(0.0, 0.1, 0.0, 2.0)]).unwrap();
        let h = height_map(&p, 9, 7, 0.5).unwrap();
        assert!(h.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn center_value_is_alpha() {
        for lambda in [0.05, 0.31, 2.0] {
            let p = SinusoidParams::new(vec![term(1.0, lambda, 0.0, 0.0)]).unwrap();
            let h = height_map(&p, 5, 5, 0.25).unwrap();
            assert_eq!(h.values.get(&[2, 2]).unwrap(), 1.0);
        }
    }

    #[test]
    fn random_two_term_matches_oracle() {
        let mut rng = Rng::new(11);
        let terms: Vec<_> = (0..2)
            .map(|_| {
                term(
                    rng.uniform(0.5, 3.0),
                    rng.uniform(0.05, 0.5),
                    rng.uniform(0.0, TAU),
                    rng.uniform(0.0, PI),
                )
            })
            .collect();
        let p = SinusoidParams::new(terms.clone()).unwrap();
        assert!((p.eval(3.2, -1.5) - oracle(&terms, 3.2, -1.5)).abs() < 1e-12);
        // grid sample landing exactly on (3.2, -1.5) at pitch 0.1: c = 32 + 10, r = -15 + 10
        let h = height_map(&p, 21, 21, 0.1).unwrap();
        let (x, y) = h.coords(0, 20);
        assert!((h.values.get(&[0, 20]).unwrap() - oracle(&terms, x, y)).abs() < 1e-12);
    }

    #[test]
    fn bad_params() {
        assert!(matches!(
            height_map(&SinusoidParams { terms: vec![term(1.0, 0.0, 0.0, 0.0)] }, 4, 4, 1.0),
            Err(SynthError::BadParams(_))
        ));
        assert!(SinusoidParams::new(vec![term(1.0, -0.1, 0.0, 0.0)]).is_err());
        assert!(SinusoidParams::new(vec![]).is_err());
    }

    #[test]
    fn mesh_counts_and_flat_normals() {
        let p = SinusoidParams::new(vec![term(0.0, 0.2, 0.0, 0.0)]).unwrap();
        let h = height_map(&p, 2, 2, 1.0).unwrap();
        let m = height_map_to_mesh(&h, &ScenePose::facing(0.0)).unwrap();
        assert_eq!(m.triangles.len(), 2);
        for n in &m.normals {
            assert!((n - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-15);
        }
        let h = height_map(&p, 3, 3, 1.0).unwrap();
        let m = height_map_to_mesh(&h, &ScenePose::facing(600.0)).unwrap();
        assert_eq!((m.triangles.len(), m.positions.len()), (8, 9));
        assert!(m.positions.iter().all(|v| v.z == 600.0));
    }

    #[test]
    fn degenerate_grid() {
        let h = HeightMap {
            values: Tensor::zeros(&[1, 5]).unwrap(),
            pitch: 1.0,
        };
        assert!(matches!(
            height_map_to_mesh(&h, &ScenePose::facing(1.0)),
            Err(SynthError::DegenerateGrid { .. })
        ));
    }

    #[test]
    fn vertex_normals_match_analytic_gradient() {
        let t = term(1.5, 0.2, 0.7, 0.6);
        let p = SinusoidParams::new(vec![t]).unwrap();
        let h = height_map(&p, 81, 81, 0.25).unwrap();
        let pose = ScenePose {
            base_depth: 600.0,
            pitch: 0.1,
            yaw: -0.05,
            roll: 1.0,
        };
        let m = height_map_to_mesh(&h, &pose).unwrap();
        let rot = pose.to_world();
        let mut worst: f64 = 0.0;
        for r in 1..80 {
            for c in 1..80 {
                let (x, y) = h.coords(r, c);
                // d/dx of alpha cos(2 pi lambda (x cos th + y sin th) + psi)
                let s = -t.alpha * 2.0 * PI * t.lambda
                    * (2.0 * PI * t.lambda * (x * t.theta.cos() + y * t.theta.sin()) + t.psi).sin();
                let analytic = Vec3::new(s * t.theta.cos(), s * t.theta.sin(), -1.0).normalize();
                let analytic = rot.transform_vector(&analytic);
                let got = m.normals[r * 81 + c];
                worst = worst.max(got.dot(&analytic).clamp(-1.0, 1.0).acos());
            }
        }
        assert!(worst < 0.02, "max normal error {worst} rad");
    }

    #[test]
    fn sample_scene_point_ranges() {
        let mut cfg = SynthConfig {
            terms: 1,
            alpha_mm: Range::point(1.0),
            lambda_per_mm: Range::point(0.2),
            psi_rad: Range::point(0.5),
            theta_rad: Range::point(0.25),
            base_depth_mm: Range::point(600.0),
            pitch_limit_deg: 0.0,
            yaw_limit_deg: 0.0,
            roll_limit_deg: 0.0,
            albedo: Range::point(0.8),
            projector_shift_mm: [Range::point(1.0), Range::point(2.0), Range::point(3.0)],
            ..SynthConfig::default()
        };
        cfg.light.azimuth_deg = Range::point(10.0);
        let s = sample_scene(&mut Rng::new(3), &cfg).unwrap();
        assert_eq!(s.params.terms, vec![term(1.0, 0.2, 0.5, 0.25)]);
        assert_eq!(s.pose, ScenePose::facing(600.0));
        assert_eq!(s.albedo, 0.8);
        assert_eq!(s.projector_shift, [1.0, 2.0, 3.0]);
        assert!((s.light() - light_direction(45.0, 10.0)).norm() < 1e-15);
    }

    #[test]
    fn sample_scene_deterministic_and_checked() {
        let cfg = SynthConfig::default();
        let a = sample_scene(&mut Rng::new(5), &cfg).unwrap();
        let b = sample_scene(&mut Rng::new(5), &cfg).unwrap();
        assert_eq!(a, b);
        let bad = SynthConfig {
            alpha_mm: Range(2.0, 1.0),
            ..SynthConfig::default()
        };
        assert!(matches!(
            sample_scene(&mut Rng::new(5), &bad),
            Err(SynthError::EmptyRange { .. })
        ));
    }

    #[test]
    fn pitch_draws_monte_carlo() {
        let cfg = SynthConfig::default();
        let mut rng = Rng::new(99);
        let draws: Vec<f64> = (0..10_000)
            .map(|_| sample_scene(&mut rng, &cfg).unwrap().pose.pitch.to_degrees())
            .collect();
        let lo = draws.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = draws.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!(lo >= -10.0 && hi <= 10.0);
        assert!(mean.abs() < 0.5, "mean {mean}");
    }

    fn arb_terms() -> impl Strategy<Value = Vec<WaveTerm>> {
        proptest::collection::vec(
            (0.0f64..3.0, 0.05f64..0.5, 0.0f64..TAU, 0.0f64..PI)
                .prop_map(|(a, l, p, t)| term(a, l, p, t)),
            1..4,
        )
    }

    proptest! {
        #[test]
        fn linear_in_alpha(terms in arb_terms(), s in -3.0f64..3.0) {
            let p = SinusoidParams::new(terms.clone()).unwrap();
            let scaled: Vec<_> = terms.iter().map(|t| term(t.alpha * s.abs(), t.lambda, t.psi, t.theta)).collect();
            let q = SinusoidParams::new(scaled).unwrap();
            let a = height_map(&p, 6, 5, 0.7).unwrap();
            let b = height_map(&q, 6, 5, 0.7).unwrap();
            for (x, y) in a.values.data().iter().zip(b.values.data()) {
                prop_assert!((x * s.abs() - y).abs() < 1e-12);
            }
        }

        #[test]
        fn cosine_parity(terms in arb_terms()) {
            let p = SinusoidParams::new(terms.clone()).unwrap();
            let flipped: Vec<_> = terms.iter().map(|t| term(t.alpha, t.lambda, -t.psi, t.theta + PI)).collect();
            let q = SinusoidParams::new(flipped).unwrap();
            let a = height_map(&p, 7, 6, 0.4).unwrap();
            let b = height_map(&q, 7, 6, 0.4).unwrap();
            for (x, y) in a.values.data().iter().zip(b.values.data()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn direction_equivariance(terms in arb_terms(), phi in -PI..PI, x in -20.0f64..20.0, y in -20.0f64..20.0) {
            let p = SinusoidParams::new(terms.clone()).unwrap();
            let turned: Vec<_> = terms.iter().map(|t| term(t.alpha, t.lambda, t.psi, t.theta - phi)).collect();
            let q = SinusoidParams::new(turned).unwrap();
            // rotate the sample point by -phi: q evaluated in the rotated frame
            let (xr, yr) = (x * phi.cos() + y * phi.sin(), -x * phi.sin() + y * phi.cos());
            prop_assert!((p.eval(x, y) - q.eval(xr, yr)).abs() < 1e-9);
        }

        #[test]
        fn sampled_scenes_satisfy_invariants(seed in any::<u64>()) {
            let cfg = SynthConfig::default();
            let s = sample_scene(&mut Rng::new(seed), &cfg).unwrap();
            prop_assert!(cfg.light.admits(&s.light()));
            prop_assert!(s.pose.pitch.abs() <= 10f64.to_radians() + 1e-12);
            prop_assert!(s.pose.yaw.abs() <= 10f64.to_radians() + 1e-12);
            prop_assert!(s.pose.roll.abs() <= PI);
            prop_assert!(s.albedo > 0.0 && s.albedo <= 1.0);
            prop_assert_eq!(s.params.count(), 2);
        }
    }
}
