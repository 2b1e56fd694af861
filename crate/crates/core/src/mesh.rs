use crate::geometry::{RigidTransform, Vec3};

/// Indexed triangle mesh with per-vertex normals.
#[derive(Debug, Clone, Default)]
pub struct TriangleMesh {
    pub positions: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Unnormalized face normal `(b - a) x (c - a)`.
    pub fn face_normal(&self, tri: usize) -> Vec3 {
        let [a, b, c] = self.triangles[tri].map(|i| self.positions[i as usize]);
        (b - a).cross(&(c - a))
    }

    /// Sets every vertex normal to the normalized mean of the unit normals of
    /// the faces touching it.
    pub fn recompute_normals(&mut self) {
        let mut acc = vec![Vec3::zeros(); self.positions.len()];
        for t in 0..self.triangles.len() {
            let n = self.face_normal(t);
            let len = n.norm();
            if len == 0.0 {
                continue;
            }
            let n = n / len;
            for &i in &self.triangles[t] {
                acc[i as usize] += n;
            }
        }
        self.normals = acc
            .into_iter()
            .map(|n| {
                let len = n.norm();
                if len > 0.0 {
                    n / len
                } else {
                    n
                }
            })
            .collect();
    }

    pub fn transformed(&self, t: &RigidTransform) -> TriangleMesh {
        TriangleMesh {
            positions: self.positions.iter().map(|p| t.transform_point(p)).collect(),
            normals: self.normals.iter().map(|n| t.transform_vector(n)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Two-triangle square of side `size` centered on the z axis at depth `z`,
    /// normal facing the origin.
    pub fn square(size: f64, z: f64) -> TriangleMesh {
        let h = size / 2.0;
        let mut m = TriangleMesh {
            positions: vec![
                Vec3::new(-h, -h, z),
                Vec3::new(-h, h, z),
                Vec3::new(h, -h, z),
                Vec3::new(h, h, z),
            ],
            normals: Vec::new(),
            triangles: vec![[0, 1, 2], [1, 3, 2]],
        };
        m.recompute_normals();
        m
    }
}
