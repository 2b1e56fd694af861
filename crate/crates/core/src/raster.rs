//! Software rasterizer for the camera/projector rig.
//!
//! Pixel `(r, c)` is sampled at its center, image coordinates `(u, v) = (c, r)`
//! with the origin at the top-left pixel. Stored depth is the camera-frame z,
//! not the ray length.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depth::DepthMap;
use crate::geometry::{Ray, RigidTransform, Vec3};
use crate::mesh::TriangleMesh;
use crate::rng::Rng;
use crate::synth::{height_map, height_map_to_mesh, SceneSpec, SynthError};
use crate::tensor::Tensor;

const NEAR_Z: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("invalid device: {0}")]
    BadDevice(String),
    #[error("pattern is {got:?} but projector resolution is {expected:?}")]
    SizeMismatch {
        expected: (usize, usize),
        got: Vec<usize>,
    },
    #[error("grid spacing {spacing} must exceed line width {line_width} >= 1")]
    BadSpacing { spacing: usize, line_width: usize },
    #[error(transparent)]
    Synth(#[from] SynthError),
}

/// Pinhole intrinsics without a pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Square pixels, principal point at the image center.
    pub fn centered(width: usize, height: usize, focal: f64) -> Self {
        Self {
            fx: focal,
            fy: focal,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }
}

/// Perspective camera or projector. `pose` maps world to device coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeDevice {
    pub intrinsics: Intrinsics,
    pub pose: RigidTransform,
}

impl PinholeDevice {
    pub fn new(intrinsics: Intrinsics, pose: RigidTransform) -> Result<Self, RasterError> {
        let k = &intrinsics;
        if !(k.fx > 0.0 && k.fy > 0.0) {
            return Err(RasterError::BadDevice("focal lengths must be positive".into()));
        }
        if k.width == 0 || k.height == 0 {
            return Err(RasterError::BadDevice("resolution must be nonzero".into()));
        }
        if !(k.cx >= 0.0 && k.cx < k.width as f64 && k.cy >= 0.0 && k.cy < k.height as f64) {
            return Err(RasterError::BadDevice(
                "principal point outside the image".into(),
            ));
        }
        Ok(Self { intrinsics, pose })
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    /// Optical center in world coordinates.
    pub fn center(&self) -> Vec3 {
        self.pose.inverse().transform_point(&Vec3::zeros())
    }

    /// Device-frame point to `(u, v)`; `None` behind the device.
    pub fn project_local(&self, p: &Vec3) -> Option<(f64, f64)> {
        if p.z <= NEAR_Z {
            return None;
        }
        let k = &self.intrinsics;
        Some((k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
    }

    pub fn project(&self, world: &Vec3) -> Option<(f64, f64)> {
        self.project_local(&self.pose.transform_point(world))
    }

    /// Device-frame direction through `(u, v)` with unit z component.
    pub fn local_dir(&self, u: f64, v: f64) -> Vec3 {
        let k = &self.intrinsics;
        Vec3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0)
    }

    /// World-space ray through `(u, v)`; `ray.at(z)` lies at device depth `z`.
    pub fn ray(&self, u: f64, v: f64) -> Ray {
        let inv = self.pose.inverse();
        Ray {
            origin: inv.transform_point(&Vec3::zeros()),
            dir: inv.transform_vector(&self.local_dir(u, v)),
        }
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0
            && v >= 0.0
            && u <= (self.intrinsics.width - 1) as f64
            && v <= (self.intrinsics.height - 1) as f64
    }
}

/// Triangle id and perspective-correct barycentric weights of a pixel's visible surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub triangle: u32,
    pub bary: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct Rasterized {
    pub depth: DepthMap,
    /// `H x W x 3`, world-frame unit normals (zero off the mask).
    pub normals: Tensor,
    pub hits: Vec<Option<Hit>>,
}

#[inline]
fn edge(ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64) -> f64 {
    (bx - ax) * (py - ay) - (by - ay) * (px - ax)
}

/// Z-buffered perspective rasterization of `mesh` into `cam`.
///
/// Triangles with any vertex at or behind the image plane are dropped. Ties
/// in depth keep the earlier triangle.
pub fn rasterize(mesh: &TriangleMesh, cam: &PinholeDevice) -> Rasterized {
    let (w, h) = (cam.width(), cam.height());
    let screen: Vec<Option<(f64, f64, f64)>> = mesh
        .positions
        .iter()
        .map(|p| {
            let q = cam.pose.transform_point(p);
            cam.project_local(&q).map(|(u, v)| (u, v, q.z))
        })
        .collect();

    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut hits: Vec<Option<Hit>> = vec![None; w * h];

    for (t, tri) in mesh.triangles.iter().enumerate() {
        let (Some(a), Some(b), Some(c)) = (
            screen[tri[0] as usize],
            screen[tri[1] as usize],
            screen[tri[2] as usize],
        ) else {
            continue;
        };
        let area = edge(a.0, a.1, b.0, b.1, c.0, c.1);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        let umin = a.0.min(b.0).min(c.0).ceil().max(0.0);
        let umax = a.0.max(b.0).max(c.0).floor().min((w - 1) as f64);
        let vmin = a.1.min(b.1).min(c.1).ceil().max(0.0);
        let vmax = a.1.max(b.1).max(c.1).floor().min((h - 1) as f64);
        if umin > umax || vmin > vmax {
            continue;
        }
        let inv_area = 1.0 / area;
        for r in vmin as usize..=vmax as usize {
            let py = r as f64;
            for col in umin as usize..=umax as usize {
                let px = col as f64;
                let w0 = edge(b.0, b.1, c.0, c.1, px, py) * inv_area;
                let w1 = edge(c.0, c.1, a.0, a.1, px, py) * inv_area;
                let w2 = edge(a.0, a.1, b.0, b.1, px, py) * inv_area;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                // 1/z is affine in screen space
                let q0 = w0 / a.2;
                let q1 = w1 / b.2;
                let q2 = w2 / c.2;
                let z = 1.0 / (q0 + q1 + q2);
                let idx = r * w + col;
                if z < zbuf[idx] {
                    zbuf[idx] = z;
                    hits[idx] = Some(Hit {
                        triangle: t as u32,
                        bary: [q0 * z, q1 * z, q2 * z],
                    });
                }
            }
        }
    }

    let mut normals = Tensor::zeros(&[h, w, 3]).expect("nonzero");
    let nd = normals.data_mut();
    for (idx, hit) in hits.iter().enumerate() {
        if let Some(hit) = hit {
            let tri = mesh.triangles[hit.triangle as usize];
            let mut n = Vec3::zeros();
            for (i, &vi) in tri.iter().enumerate() {
                n += mesh.normals[vi as usize] * hit.bary[i];
            }
            let len = n.norm();
            let n = if len > 0.0 {
                n / len
            } else {
                // fall back to the face normal
                mesh.face_normal(hit.triangle as usize).normalize()
            };
            nd[3 * idx..3 * idx + 3].copy_from_slice(n.as_slice());
        }
    }
    let depth = DepthMap::from_fn(w, h, |r, c| {
        let z = zbuf[r * w + c];
        z.is_finite().then_some(z)
    })
    .expect("finite depths");
    Rasterized {
        depth,
        normals,
        hits,
    }
}

#[inline]
fn normal_at(normals: &Tensor, idx: usize) -> Vec3 {
    let d = &normals.data()[3 * idx..3 * idx + 3];
    Vec3::new(d[0], d[1], d[2])
}

/// Lambertian shading under a directional light travelling along `light_dir`,
/// with per-pixel albedo. Zero off the mask.
pub fn shade_lambertian_with(
    normals: &Tensor,
    mask: &Tensor,
    light_dir: &Vec3,
    albedo: impl Fn(usize) -> f64,
) -> Tensor {
    let (h, w) = (mask.shape()[0], mask.shape()[1]);
    let to_light = -light_dir;
    Tensor::from_fn(&[h, w], |idx| {
        if mask.data()[idx] != 1.0 {
            return 0.0;
        }
        albedo(idx) * normal_at(normals, idx).dot(&to_light).max(0.0)
    })
    .expect("nonzero")
}

/// `albedo * max(0, n . -light_dir)` on the mask.
pub fn shade_lambertian(normals: &Tensor, mask: &Tensor, light_dir: &Vec3, albedo: f64) -> Tensor {
    shade_lambertian_with(normals, mask, light_dir, |_| albedo)
}

/// Bilinear lookup at continuous pixel coordinates; caller checks bounds.
fn bilinear(img: &Tensor, u: f64, v: f64) -> f64 {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let d = img.data();
    let c0 = (u.floor() as usize).min(w - 1);
    let r0 = (v.floor() as usize).min(h - 1);
    let c1 = (c0 + 1).min(w - 1);
    let r1 = (r0 + 1).min(h - 1);
    let fu = u - c0 as f64;
    let fv = v - r0 as f64;
    let top = d[r0 * w + c0] * (1.0 - fu) + d[r0 * w + c1] * fu;
    let bot = d[r1 * w + c0] * (1.0 - fu) + d[r1 * w + c1] * fu;
    top * (1.0 - fv) + bot * fv
}

/// World point seen at camera pixel `idx` at the stored depth.
fn surface_point(cam: &PinholeDevice, depth: &DepthMap, idx: usize) -> Vec3 {
    let w = depth.width();
    let (r, c) = (idx / w, idx % w);
    cam.ray(c as f64, r as f64).at(depth.depth().data()[idx])
}

/// Camera image of `pattern` projected by `proj` onto already-rasterized geometry.
///
/// Each lit pixel takes the bilinear pattern value where its surface point
/// lands in the projector, scaled by the Lambertian factor toward the
/// projector center. Inter-surface shadowing is ignored.
pub fn project_pattern_onto(
    raster: &Rasterized,
    cam: &PinholeDevice,
    proj: &PinholeDevice,
    pattern: &Tensor,
) -> Result<Tensor, RasterError> {
    let expected = (proj.height(), proj.width());
    if pattern.shape() != [expected.0, expected.1] {
        return Err(RasterError::SizeMismatch {
            expected,
            got: pattern.shape().to_vec(),
        });
    }
    let depth = &raster.depth;
    let center = proj.center();
    let out = Tensor::from_fn(&[cam.height(), cam.width()], |idx| {
        if depth.mask().data()[idx] != 1.0 {
            return 0.0;
        }
        let x = surface_point(cam, depth, idx);
        let Some((u, v)) = proj.project(&x) else {
            return 0.0;
        };
        if !proj.contains(u, v) {
            return 0.0;
        }
        let lambert = normal_at(&raster.normals, idx).dot(&(center - x).normalize());
        if lambert <= 0.0 {
            return 0.0;
        }
        bilinear(pattern, u, v) * lambert
    })
    .expect("nonzero");
    Ok(out)
}

pub fn project_pattern(
    mesh: &TriangleMesh,
    cam: &PinholeDevice,
    proj: &PinholeDevice,
    pattern: &Tensor,
) -> Result<Tensor, RasterError> {
    project_pattern_onto(&rasterize(mesh, cam), cam, proj, pattern)
}

/// Binary grid: pixel `(r, c)` is lit when `r % spacing < line_width` or
/// `c % spacing < line_width`.
pub fn grid_pattern(
    width: usize,
    height: usize,
    spacing: usize,
    line_width: usize,
) -> Result<Tensor, RasterError> {
    if line_width < 1 || spacing <= line_width {
        return Err(RasterError::BadSpacing {
            spacing,
            line_width,
        });
    }
    Tensor::from_fn(&[height, width], |idx| {
        let (r, c) = (idx / width, idx % width);
        if r % spacing < line_width || c % spacing < line_width {
            1.0
        } else {
            0.0
        }
    })
    .map_err(|_| RasterError::BadDevice("empty pattern".into()))
}

/// Calibrated camera/projector pair. The camera frame is the world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigConfig {
    pub camera: Intrinsics,
    pub projector: Intrinsics,
    /// Nominal projector center, mm.
    pub projector_position: [f64; 3],
    /// Point the projector's optical axis passes through at the nominal position.
    pub projector_target: [f64; 3],
    pub grid_spacing_px: usize,
    pub grid_line_px: usize,
    /// Height-map sample pitch used to mesh the surface, mm.
    pub mesh_pitch_mm: f64,
    /// Mesh side length relative to the camera footprint at the surface depth.
    pub mesh_margin: f64,
}

impl RigConfig {
    /// 240x240 camera at 0.2 mm/px on a surface 600 mm away.
    pub fn desk() -> Self {
        Self {
            camera: Intrinsics::centered(240, 240, 3000.0),
            projector: Intrinsics::centered(320, 320, 3000.0),
            projector_position: [100.0, 0.0, 0.0],
            projector_target: [0.0, 0.0, 600.0],
            grid_spacing_px: 40,
            grid_line_px: 1,
            mesh_pitch_mm: 0.25,
            mesh_margin: 1.6,
        }
    }

    /// 1200x1200 camera covering a 240 mm field at 600 mm.
    pub fn paper() -> Self {
        Self {
            camera: Intrinsics::centered(1200, 1200, 3000.0),
            projector: Intrinsics::centered(1600, 1600, 3000.0),
            projector_position: [100.0, 0.0, 0.0],
            projector_target: [0.0, 0.0, 600.0],
            grid_spacing_px: 40,
            grid_line_px: 1,
            mesh_pitch_mm: 0.25,
            mesh_margin: 1.6,
        }
    }

    pub fn camera(&self) -> Result<PinholeDevice, RasterError> {
        PinholeDevice::new(self.camera, RigidTransform::identity())
    }

    /// Projector with its nominal orientation, translated by `shift`.
    pub fn projector(&self, shift: [f64; 3]) -> Result<PinholeDevice, RasterError> {
        let eye = Vec3::from(self.projector_position);
        let nominal = RigidTransform::look_at(eye, Vec3::from(self.projector_target), Vec3::y());
        let moved = eye + Vec3::from(shift);
        let pose = RigidTransform::new(*nominal.rotation(), -(nominal.rotation() * moved))
            .map_err(|e| RasterError::BadDevice(e.to_string()))?;
        PinholeDevice::new(self.projector, pose)
    }

    pub fn pattern(&self) -> Result<Tensor, RasterError> {
        grid_pattern(
            self.projector.width,
            self.projector.height,
            self.grid_spacing_px,
            self.grid_line_px,
        )
    }

    /// Height-map grid size covering the camera footprint at `depth` with margin.
    pub fn mesh_samples(&self, depth: f64) -> usize {
        let k = &self.camera;
        let span = (k.width as f64 / k.fx).max(k.height as f64 / k.fy) * depth;
        ((span * self.mesh_margin / self.mesh_pitch_mm).ceil() as usize + 1).max(2)
    }
}

/// Raw rendered images of one scene.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub shading: Tensor,
    pub depth: DepthMap,
    pub pattern: Tensor,
}

pub fn scene_mesh(scene: &SceneSpec, rig: &RigConfig) -> Result<TriangleMesh, RasterError> {
    let n = rig.mesh_samples(scene.pose.base_depth);
    let h = height_map(&scene.params, n, n, rig.mesh_pitch_mm)?;
    Ok(height_map_to_mesh(&h, &scene.pose)?)
}

/// Renders shading, depth and the grid-pattern image for `scene`.
pub fn render_scene(scene: &SceneSpec, rig: &RigConfig) -> Result<RenderOutput, RasterError> {
    let cam = rig.camera()?;
    let proj = rig.projector(scene.projector_shift)?;
    let mesh = scene_mesh(scene, rig)?;
    let raster = rasterize(&mesh, &cam);
    let mask = raster.depth.mask().clone();

    let to_local = scene.pose.to_world().inverse();
    let textured = !scene.texture.is_empty();
    let mut shading = shade_lambertian_with(&raster.normals, &mask, &scene.light(), |idx| {
        if textured {
            let p = to_local.transform_point(&surface_point(&cam, &raster.depth, idx));
            scene.albedo_at(p.x, p.y)
        } else {
            scene.albedo
        }
    });
    if scene.shading_noise > 0.0 {
        let mut rng = Rng::new(scene.seed).fork(0x5EED);
        for (s, &m) in shading.data_mut().iter_mut().zip(mask.data()) {
            if m == 1.0 {
                *s = (*s + rng.normal(0.0, scene.shading_noise)).clamp(0.0, 1.0);
            }
        }
    }
    let pattern = project_pattern_onto(&raster, &cam, &proj, &rig.pattern()?)?;
    Ok(RenderOutput {
        shading,
        depth: raster.depth,
        pattern,
    })
}
