//! Rigid transforms and rays. Millimeters, right-handed, cameras look down +z.

use nalgebra::{Matrix3, Rotation3, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

const ORTHO_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rotation is not orthonormal with det +1 (residual {0:e})")]
    NotRotation(f64),
}

/// `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Mat3,
    translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        let ortho = (rotation * rotation.transpose() - Mat3::identity()).abs().max();
        let det = (rotation.determinant() - 1.0).abs();
        let residual = ortho.max(det);
        if !(residual <= ORTHO_TOL) {
            return Err(GeometryError::NotRotation(residual));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: t,
        }
    }

    /// Rotation about a unit axis by `angle` radians.
    pub fn from_axis_angle(axis: Vec3, angle: f64, translation: Vec3) -> Self {
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        Self {
            rotation: *rot.matrix(),
            translation,
        }
    }

    /// `Rx(pitch) * Ry(yaw) * Rz(roll)`: roll spins within the local xy-plane first.
    pub fn from_pitch_yaw_roll(pitch: f64, yaw: f64, roll: f64, translation: Vec3) -> Self {
        let r = Rotation3::from_axis_angle(&Vec3::x_axis(), pitch)
            * Rotation3::from_axis_angle(&Vec3::y_axis(), yaw)
            * Rotation3::from_axis_angle(&Vec3::z_axis(), roll);
        Self {
            rotation: *r.matrix(),
            translation,
        }
    }

    /// World-to-device pose for a device centered at `eye` whose optical (+z)
    /// axis points at `target`, with image-down (+y) as close to `down` as possible.
    pub fn look_at(eye: Vec3, target: Vec3, down: Vec3) -> Self {
        let z = (target - eye).normalize();
        let x = down.cross(&z).normalize();
        let y = z.cross(&x);
        let rotation = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Self {
            rotation,
            translation: -(rotation * eye),
        }
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Not necessarily unit length.
    pub dir: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn transform_point_examples() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(RigidTransform::identity().transform_point(&p), p);
        let t = RigidTransform::from_translation(Vec3::new(0.0, 0.0, 5.0));
        assert_eq!(t.transform_point(&Vec3::zeros()), Vec3::new(0.0, 0.0, 5.0));

        // direct matrix product with the textbook Rz(90°)
        let rz = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let t = RigidTransform::from_axis_angle(Vec3::z(), FRAC_PI_2, Vec3::zeros());
        let got = t.transform_point(&Vec3::x());
        let want = rz * Vec3::x();
        assert!((got - want).norm() < 1e-12);
        assert!((got - Vec3::y()).norm() < 1e-12);
    }

    #[test]
    fn rejects_non_rotation() {
        let m = Mat3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(RigidTransform::new(m, Vec3::zeros()).is_err());
        let m = Mat3::identity() * 1.001;
        assert!(RigidTransform::new(m, Vec3::zeros()).is_err());
    }

    #[test]
    fn look_at_points_optical_axis() {
        let eye = Vec3::new(100.0, 20.0, 0.0);
        let target = Vec3::new(0.0, 0.0, 600.0);
        let t = RigidTransform::look_at(eye, target, Vec3::y());
        let p = t.transform_point(&target);
        assert!(p.x.abs() < 1e-9 && p.y.abs() < 1e-9 && p.z > 0.0);
        assert!(t.transform_point(&eye).norm() < 1e-9);
        assert!(RigidTransform::new(*t.rotation(), *t.translation()).is_ok());
    }

    fn arb_transform() -> impl Strategy<Value = RigidTransform> {
        (
            -3.2f64..3.2,
            -3.2f64..3.2,
            -3.2f64..3.2,
            -500.0f64..500.0,
            -500.0f64..500.0,
            -500.0f64..500.0,
        )
            .prop_map(|(a, b, c, x, y, z)| {
                RigidTransform::from_pitch_yaw_roll(a, b, c, Vec3::new(x, y, z))
            })
    }

    proptest! {
        #[test]
        fn inverse_undoes_forward(t in arb_transform(), x in -1e3f64..1e3, y in -1e3f64..1e3, z in -1e3f64..1e3) {
            let p = Vec3::new(x, y, z);
            let back = t.inverse().transform_point(&t.transform_point(&p));
            prop_assert!((back - p).norm() < 1e-9);
        }

        #[test]
        fn composition_is_associative(a in arb_transform(), b in arb_transform(), c in arb_transform(),
                                      x in -1e3f64..1e3, y in -1e3f64..1e3, z in -1e3f64..1e3) {
            let p = Vec3::new(x, y, z);
            let left = a.compose(&b).compose(&c).transform_point(&p);
            let right = a.compose(&b.compose(&c)).transform_point(&p);
            prop_assert!((left - right).norm() < 1e-9);
            let seq = a.transform_point(&b.transform_point(&c.transform_point(&p)));
            prop_assert!((left - seq).norm() < 1e-9);
        }

        #[test]
        fn euler_rotation_is_valid(t in arb_transform()) {
            prop_assert!(RigidTransform::new(*t.rotation(), *t.translation()).is_ok());
        }
    }
}
