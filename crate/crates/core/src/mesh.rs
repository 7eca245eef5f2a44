//! Triangle meshes: validation, normalization, surface sampling and a small
//! library of procedural primitives.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::RigidTransform;

/// Whether mesh coordinates are in normalized model units or meters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshFrame {
    Normalized,
    Metric,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[u32; 3]>,
    frame: MeshFrame,
}

impl TriangleMesh {
    /// Validates indices and coordinates and drops zero-area faces.
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[u32; 3]>, frame: MeshFrame) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::InvalidMesh("no vertices".into()));
        }
        if vertices.iter().any(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::NonFinite);
        }
        let n = vertices.len() as u32;
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
            return Err(Error::InvalidMesh(format!("face {f:?} indexes past {n} vertices")));
        }
        let faces: Vec<[u32; 3]> = faces
            .into_iter()
            .filter(|f| {
                let [a, b, c] = f.map(|i| vertices[i as usize]);
                (b - a).cross(&(c - a)).norm() > 0.0
            })
            .collect();
        if faces.is_empty() {
            return Err(Error::InvalidMesh("no non-degenerate faces".into()));
        }
        let mesh = Self {
            vertices,
            faces,
            frame,
        };
        if frame == MeshFrame::Metric && mesh.bounding_radius() <= 0.0 {
            return Err(Error::InvalidMesh("metric mesh has zero extent".into()));
        }
        Ok(mesh)
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn frame(&self) -> MeshFrame {
        self.frame
    }

    pub fn triangle(&self, face: usize) -> [Vector3<f64>; 3] {
        self.faces[face].map(|i| self.vertices[i as usize])
    }

    pub fn bounding_box(&self) -> (Vector3<f64>, Vector3<f64>) {
        self.vertices.iter().fold(
            (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY)),
            |(lo, hi), v| (lo.inf(v), hi.sup(v)),
        )
    }

    pub fn bbox_center(&self) -> Vector3<f64> {
        let (lo, hi) = self.bounding_box();
        (lo + hi) * 0.5
    }

    /// Radius of the smallest sphere centered at the model origin that
    /// contains every vertex.
    pub fn bounding_radius(&self) -> f64 {
        self.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Re-centered on the bounding-box center and scaled to a unit bounding
    /// sphere.
    pub fn normalized(&self) -> Self {
        let c = self.bbox_center();
        let r = self.vertices.iter().map(|v| (v - c).norm()).fold(0.0, f64::max);
        Self {
            vertices: self.vertices.iter().map(|v| (v - c) / r).collect(),
            faces: self.faces.clone(),
            frame: MeshFrame::Normalized,
        }
    }

    /// Uniformly scaled copy in meters.
    pub fn scaled(&self, scale: f64) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| v * scale).collect(),
            faces: self.faces.clone(),
            frame: MeshFrame::Metric,
        }
    }

    pub fn with_frame(mut self, frame: MeshFrame) -> Self {
        self.frame = frame;
        self
    }

    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| t.apply(v)).collect(),
            faces: self.faces.clone(),
            frame: self.frame,
        }
    }

    /// Concatenates two meshes in the same frame.
    pub fn merged(&self, other: &TriangleMesh) -> Self {
        let offset = self.vertices.len() as u32;
        let mut vertices = self.vertices.clone();
        vertices.extend_from_slice(&other.vertices);
        let mut faces = self.faces.clone();
        faces.extend(other.faces.iter().map(|f| f.map(|i| i + offset)));
        Self {
            vertices,
            faces,
            frame: self.frame,
        }
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.triangle(face);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Area-weighted uniform samples on the surface, deterministic in `seed`.
    pub fn sample_surface(&self, count: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut cdf = Vec::with_capacity(self.faces.len());
        let mut acc = 0.0;
        for f in 0..self.faces.len() {
            acc += self.face_area(f);
            cdf.push(acc);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let x = rng.random::<f64>() * acc;
                let face = cdf.partition_point(|&c| c < x).min(cdf.len() - 1);
                let [a, b, c] = self.triangle(face);
                let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                a + (b - a) * u + (c - a) * v
            })
            .collect()
    }

    // ---- procedural primitives -------------------------------------------------

    /// Axis-aligned box centered at the origin.
    pub fn cuboid(ex: f64, ey: f64, ez: f64) -> Self {
        let (hx, hy, hz) = (ex / 2.0, ey / 2.0, ez / 2.0);
        let vertices = (0..8)
            .map(|i| {
                Vector3::new(
                    if i & 1 == 0 { -hx } else { hx },
                    if i & 2 == 0 { -hy } else { hy },
                    if i & 4 == 0 { -hz } else { hz },
                )
            })
            .collect();
        let faces = vec![
            [0, 2, 1], [1, 2, 3], // -z
            [4, 5, 6], [5, 7, 6], // +z
            [0, 1, 4], [1, 5, 4], // -y
            [2, 6, 3], [3, 6, 7], // +y
            [0, 4, 2], [2, 4, 6], // -x
            [1, 3, 5], [3, 7, 5], // +x
        ];
        Self::build(vertices, faces)
    }

    /// Rectangle in the z = 0 plane, centered at the origin.
    pub fn quad(width: f64, height: f64) -> Self {
        let (hw, hh) = (width / 2.0, height / 2.0);
        let vertices = vec![
            Vector3::new(-hw, -hh, 0.0),
            Vector3::new(hw, -hh, 0.0),
            Vector3::new(hw, hh, 0.0),
            Vector3::new(-hw, hh, 0.0),
        ];
        Self::build(vertices, vec![[0, 1, 2], [0, 2, 3]])
    }

    /// Closed surface given by a radial function over the unit sphere.
    pub fn radial_surface(stacks: usize, slices: usize, f: impl Fn(Vector3<f64>) -> Vector3<f64>) -> Self {
        let stacks = stacks.max(2);
        let slices = slices.max(3);
        let mut vertices = vec![f(Vector3::new(0.0, 0.0, 1.0))];
        for i in 1..stacks {
            let theta = PI * i as f64 / stacks as f64;
            for j in 0..slices {
                let phi = 2.0 * PI * j as f64 / slices as f64;
                let dir = Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
                vertices.push(f(dir));
            }
        }
        vertices.push(f(Vector3::new(0.0, 0.0, -1.0)));
        let south = (vertices.len() - 1) as u32;
        let ring = |i: usize, j: usize| (1 + (i - 1) * slices + j % slices) as u32;
        let mut faces = Vec::new();
        for j in 0..slices {
            faces.push([0, ring(1, j), ring(1, j + 1)]);
        }
        for i in 1..stacks - 1 {
            for j in 0..slices {
                let (a, b) = (ring(i, j), ring(i, j + 1));
                let (c, d) = (ring(i + 1, j), ring(i + 1, j + 1));
                faces.push([a, c, d]);
                faces.push([a, d, b]);
            }
        }
        for j in 0..slices {
            faces.push([south, ring(stacks - 1, j + 1), ring(stacks - 1, j)]);
        }
        Self::build(vertices, faces)
    }

    pub fn uv_sphere(radius: f64, stacks: usize, slices: usize) -> Self {
        Self::radial_surface(stacks, slices, |d| d * radius)
    }

    pub fn ellipsoid(a: f64, b: f64, c: f64, stacks: usize, slices: usize) -> Self {
        Self::radial_surface(stacks, slices, |d| Vector3::new(a * d.x, b * d.y, c * d.z))
    }

    /// Smooth, asymmetric closed surface (a lumpy ellipsoid) whose pose is
    /// locally well determined from depth alone.
    pub fn blob(stacks: usize, slices: usize) -> Self {
        Self::radial_surface(stacks, slices, |d| {
            let bump = 1.0 + 0.12 * d.x + 0.07 * d.y + 0.08 * d.y * d.z + 0.05 * d.x * d.z;
            Vector3::new(d.x, 0.75 * d.y, 0.55 * d.z) * bump
        })
    }

    /// Closed cylinder along z, centered at the origin.
    pub fn cylinder(radius: f64, height: f64, segments: usize) -> Self {
        let segments = segments.max(3);
        let hz = height / 2.0;
        let mut vertices = vec![Vector3::new(0.0, 0.0, -hz), Vector3::new(0.0, 0.0, hz)];
        for j in 0..segments {
            let phi = 2.0 * PI * j as f64 / segments as f64;
            let (x, y) = (radius * phi.cos(), radius * phi.sin());
            vertices.push(Vector3::new(x, y, -hz));
            vertices.push(Vector3::new(x, y, hz));
        }
        let lo = |j: usize| (2 + 2 * (j % segments)) as u32;
        let hi = |j: usize| (3 + 2 * (j % segments)) as u32;
        let mut faces = Vec::new();
        for j in 0..segments {
            faces.push([0, lo(j + 1), lo(j)]);
            faces.push([1, hi(j), hi(j + 1)]);
            faces.push([lo(j), lo(j + 1), hi(j + 1)]);
            faces.push([lo(j), hi(j + 1), hi(j)]);
        }
        Self::build(vertices, faces)
    }

    /// Three boxes of different sizes fused into an L-shaped block with a
    /// post: sharp creases and no rotational symmetry.
    pub fn asymmetric_block() -> Self {
        let base = Self::cuboid(1.2, 0.5, 0.4);
        let arm = Self::cuboid(0.4, 0.9, 0.4)
            .transformed(&RigidTransform::from_translation(Vector3::new(-0.4, 0.6, 0.0)));
        let post = Self::cuboid(0.25, 0.25, 0.6)
            .transformed(&RigidTransform::from_translation(Vector3::new(0.35, 0.0, 0.45)));
        base.merged(&arm).merged(&post)
    }

    fn build(vertices: Vec<Vector3<f64>>, faces: Vec<[u32; 3]>) -> Self {
        Self::new(vertices, faces, MeshFrame::Metric).expect("procedural mesh is valid")
    }
}

/// Ten occluder shapes in meters: boxes, cylinders and spheres of varied
/// aspect.
pub fn occluder_library() -> Vec<TriangleMesh> {
    vec![
        TriangleMesh::cuboid(0.06, 0.06, 0.06),
        TriangleMesh::cuboid(0.10, 0.04, 0.05),
        TriangleMesh::cuboid(0.03, 0.08, 0.12),
        TriangleMesh::cylinder(0.03, 0.10, 24),
        TriangleMesh::cylinder(0.05, 0.04, 24),
        TriangleMesh::cylinder(0.02, 0.14, 16),
        TriangleMesh::uv_sphere(0.035, 12, 24),
        TriangleMesh::uv_sphere(0.05, 12, 24),
        TriangleMesh::ellipsoid(0.07, 0.04, 0.03, 12, 24),
        TriangleMesh::ellipsoid(0.03, 0.03, 0.06, 12, 24),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_indices_and_drops_degenerate_faces() {
        let v = vec![Vector3::zeros(), Vector3::x(), Vector3::y()];
        assert!(TriangleMesh::new(v.clone(), vec![[0, 1, 3]], MeshFrame::Metric).is_err());
        let m = TriangleMesh::new(v.clone(), vec![[0, 1, 2], [0, 0, 1]], MeshFrame::Metric).unwrap();
        assert_eq!(m.faces().len(), 1);
        assert!(TriangleMesh::new(v, vec![[0, 0, 1]], MeshFrame::Metric).is_err());
    }

    #[test]
    fn normalization_gives_unit_bounding_sphere() {
        let m = TriangleMesh::cuboid(2.0, 1.0, 0.5)
            .transformed(&RigidTransform::from_translation(Vector3::new(3.0, -1.0, 2.0)))
            .normalized();
        assert!((m.bounding_radius() - 1.0).abs() < 1e-12);
        assert!(m.bbox_center().norm() < 1e-12);
        assert_eq!(m.frame(), MeshFrame::Normalized);
    }

    #[test]
    fn primitives_are_closed_and_sized() {
        let s = TriangleMesh::uv_sphere(2.0, 8, 16);
        assert!((s.bounding_radius() - 2.0).abs() < 1e-12);
        let c = TriangleMesh::cuboid(1.0, 1.0, 1.0);
        assert!((c.surface_area() - 6.0).abs() < 1e-12);
        let cyl = TriangleMesh::cylinder(1.0, 2.0, 64);
        let (lo, hi) = cyl.bounding_box();
        assert!((hi.z - lo.z - 2.0).abs() < 1e-12);
        assert_eq!(occluder_library().len(), 10);
    }

    #[test]
    fn surface_samples_lie_on_the_mesh() {
        let c = TriangleMesh::cuboid(1.0, 1.0, 1.0);
        let pts = c.sample_surface(500, 3);
        for p in &pts {
            assert!((p.amax() - 0.5).abs() < 1e-12);
        }
        assert_eq!(pts, c.sample_surface(500, 3));
    }
}
