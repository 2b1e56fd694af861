//! Direct ray casting of the analytic height field, without meshing.

use rayon::prelude::*;

use crate::depth::DepthMap;
use crate::raster::{PinholeDevice, RasterError, RigConfig};
use crate::synth::SceneSpec;
use crate::tensor::Tensor;

const MARCH_STEP_MM: f64 = 0.05;

/// Analytic depth and untextured, noise-free shading of `scene`.
#[derive(Debug, Clone)]
pub struct ReferenceRender {
    pub depth: DepthMap,
    pub shading: Tensor,
}

/// First intersection of the camera ray through `(u, v)` with the surface,
/// searched inside the slab `|local z| <= relief`. Returns camera-frame z.
pub fn cast_ray(scene: &SceneSpec, cam: &PinholeDevice, u: f64, v: f64, relief: f64) -> Option<f64> {
    let to_local = scene.pose.to_world().inverse();
    let dir = cam.local_dir(u, v);
    // camera frame is the world frame for the rig camera
    let local = |z: f64| to_local.transform_point(&(dir * (z / dir.z)));
    let f = |z: f64| {
        let p = local(z);
        p.z - scene.params.eval(p.x, p.y)
    };
    // local z is affine in camera z along the ray
    let (p0, p1) = (local(0.0), local(1.0));
    let slope = p1.z - p0.z;
    if slope.abs() < 1e-12 {
        return None;
    }
    let za = (-relief - 1e-6 - p0.z) / slope;
    let zb = (relief + 1e-6 - p0.z) / slope;
    let (z_lo, z_hi) = (za.min(zb).max(0.0), za.max(zb));
    let mut z0 = z_lo;
    let mut f0 = f(z0);
    while z0 < z_hi {
        let z1 = (z0 + MARCH_STEP_MM).min(z_hi);
        let f1 = f(z1);
        if f0 == 0.0 {
            return Some(z0);
        }
        if f0.signum() != f1.signum() {
            let (mut a, mut b, mut fa) = (z0, z1, f0);
            for _ in 0..60 {
                let m = 0.5 * (a + b);
                let fm = f(m);
                if fm.signum() == fa.signum() {
                    a = m;
                    fa = fm;
                } else {
                    b = m;
                }
            }
            return Some(0.5 * (a + b));
        }
        z0 = z1;
        f0 = f1;
    }
    None
}

/// Casts every camera pixel of the rig against the surface and shades the
/// hit with the analytic normal.
pub fn reference_render(scene: &SceneSpec, rig: &RigConfig) -> Result<ReferenceRender, RasterError> {
    let cam = rig.camera()?;
    let (w, h) = (cam.width(), cam.height());
    let relief = scene.params.amplitude_sum();
    let lim = 0.5 * (rig.mesh_samples(scene.pose.base_depth) - 1) as f64 * rig.mesh_pitch_mm;
    let world = scene.pose.to_world();
    let to_local = world.inverse();
    let light = scene.light();

    let rows: Vec<Vec<(Option<f64>, f64)>> = (0..h)
        .into_par_iter()
        .map(|r| {
            (0..w)
                .map(|c| {
                    let Some(z) = cast_ray(scene, &cam, c as f64, r as f64, relief) else {
                        return (None, 0.0);
                    };
                    let dir = cam.local_dir(c as f64, r as f64);
                    let p = to_local.transform_point(&(dir * (z / dir.z)));
                    // the meshed surface ends at the grid border
                    if p.x.abs() > lim || p.y.abs() > lim {
                        return (None, 0.0);
                    }
                    let n = world.transform_vector(&scene.params.normal(p.x, p.y));
                    (Some(z), scene.albedo * n.dot(&-light).max(0.0))
                })
                .collect()
        })
        .collect();
    let flat: Vec<_> = rows.into_iter().flatten().collect();
    let depth = DepthMap::from_fn(w, h, |r, c| flat[r * w + c].0).expect("finite");
    let shading = Tensor::from_vec(&[h, w], flat.iter().map(|x| x.1).collect()).expect("shape");
    Ok(ReferenceRender { depth, shading })
}
