use nalgebra::{Matrix3, Matrix3x6, Matrix6, Rotation3, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::raster::{rasterize, Observation};
use crate::spatial::KdTree;
use crate::{RigidTransform, ScaledModelPose};

/// One incremental update: `R⁺ = exp(ω)·R`, `t⁺ = t + Δt`, `s⁺ = s·Δs`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefineStep {
    /// Axis-angle ω in radians.
    pub delta_rotation: Vector3<f64>,
    pub delta_translation: Vector3<f64>,
    pub delta_scale: f64,
}

impl RefineStep {
    pub fn identity() -> Self {
        Self {
            delta_rotation: Vector3::zeros(),
            delta_translation: Vector3::zeros(),
            delta_scale: 1.0,
        }
    }

    pub fn rotation_angle(&self) -> f64 {
        self.delta_rotation.norm()
    }

    /// Applies the rigid part.
    pub fn apply(&self, pose: &RigidTransform) -> RigidTransform {
        let dr = Rotation3::new(self.delta_rotation).into_inner();
        RigidTransform::from_rotation_unchecked(dr * pose.rotation(), pose.translation() + self.delta_translation).renormalized()
    }
}

/// Proposes a pose update from a render at the current pose and the
/// observation.
pub trait Refiner: Sync {
    fn refine_step(&self, mesh: &TriangleMesh, obs: &Observation, current: &ScaledModelPose) -> Result<RefineStep>;
}

/// One Gauss–Newton step of point-to-plane ICP between the rendered and the
/// observed depth, with nearest-neighbor association.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpRefiner {
    /// Pixel step when sampling the rendered surface.
    pub stride: u32,
    /// Minimum number of pixels covered by both the render and the mask.
    pub min_overlap: usize,
    /// Pairs farther apart than this multiple of the median distance are
    /// dropped.
    pub trim: f64,
    /// Lower bound on the pairing gate, relative to the median depth.
    pub min_gate: f64,
    /// Weight of the point-to-point term added to the point-to-plane residual;
    /// it keeps early steps from sliding along flat regions.
    pub point_weight: f64,
    /// Gauss–Newton iterations with re-association against the same render.
    pub inner_iterations: usize,
    /// Largest rotation taken by a single Gauss–Newton iteration.
    pub max_step_rad: f64,
}

impl Default for IcpRefiner {
    fn default() -> Self {
        Self {
            stride: 2,
            min_overlap: 100,
            trim: 3.0,
            min_gate: 0.01,
            point_weight: 0.0,
            inner_iterations: 20,
            max_step_rad: 0.1,
        }
    }
}

/// Observed points with normals from central differences, oriented toward
/// the camera. Pixels at the mask edge or across depth discontinuities get no
/// normal.
pub(crate) fn observed_points_with_normals(obs: &Observation) -> (Vec<Vector3<f64>>, Vec<Option<Vector3<f64>>>) {
    let (w, h) = (obs.depth.width(), obs.depth.height());
    let k = &obs.intrinsics;
    let point = |x: u32, y: u32| -> Option<Vector3<f64>> {
        if x >= w || y >= h || !obs.mask.get(x, y) {
            return None;
        }
        k.backproject(&Vector2::new(x as f64, y as f64), obs.depth.get(x, y)).ok()
    };
    let mut pts = Vec::new();
    let mut normals = Vec::new();
    for (x, y) in obs.mask.pixels() {
        let Some(c) = point(x, y) else { continue };
        pts.push(c);
        normals.push(normal_at(c, x, y, &point));
    }
    (pts, normals)
}

fn normal_at(c: Vector3<f64>, x: u32, y: u32, point: &impl Fn(u32, u32) -> Option<Vector3<f64>>) -> Option<Vector3<f64>> {
    if x == 0 || y == 0 {
        return None;
    }
    let (l, r, u, d) = (point(x - 1, y)?, point(x + 1, y)?, point(x, y - 1)?, point(x, y + 1)?);
    if [l, r, u, d].iter().any(|p| (p.z - c.z).abs() > 0.02 * c.z) {
        return None;
    }
    let n = (r - l).cross(&(d - u));
    let norm = n.norm();
    if !(norm > 0.0) {
        return None;
    }
    Some(if n.dot(&c) > 0.0 { -n / norm } else { n / norm })
}

impl IcpRefiner {
    /// One point-to-plane Gauss–Newton step for `source` (camera frame) against
    /// the observed points, linearized about the object origin `t`:
    /// `X⁺ ≈ X + ω × (X − t) + Δt`.
    fn gauss_newton(
        &self,
        source: &[Vector3<f64>],
        t: &Vector3<f64>,
        tree: &KdTree<'_>,
        targets: &[Vector3<f64>],
        normals: &[Option<Vector3<f64>>],
    ) -> Result<(Vector3<f64>, Vector3<f64>)> {
        let mut pairs: Vec<(Vector3<f64>, usize, f64)> = source
            .iter()
            .filter_map(|p| tree.nearest(p).map(|(j, d2)| (*p, j, d2.sqrt())))
            .collect();
        if pairs.is_empty() {
            return Err(Error::InsufficientOverlap(0));
        }
        let mut dist: Vec<f64> = pairs.iter().map(|p| p.2).collect();
        dist.sort_by(f64::total_cmp);
        let mut z: Vec<f64> = pairs.iter().map(|p| p.0.z).collect();
        z.sort_by(f64::total_cmp);
        let gate = (self.trim * dist[dist.len() / 2]).max(self.min_gate * z[z.len() / 2]);
        pairs.retain(|p| p.2 <= gate && normals[p.1].is_some());
        if pairs.len() < 6 {
            return Err(Error::InsufficientOverlap(pairs.len()));
        }

        let mut hess = Matrix6::zeros();
        let mut grad = Vector6::zeros();
        for (x, j, _) in &pairs {
            let n = normals[*j].expect("filtered above");
            let e = x - targets[*j];
            let a = (x - t).cross(&n);
            let jac = Vector6::new(a.x, a.y, a.z, n.x, n.y, n.z);
            hess += jac * jac.transpose();
            grad += jac * n.dot(&e);
            if self.point_weight > 0.0 {
                // X⁺ − Y ≈ e + [−[X−t]×, I]·(ω, Δt)
                let mut jp = Matrix3x6::zeros();
                jp.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-(x - t).cross_matrix()));
                jp.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
                hess += jp.transpose() * jp * self.point_weight;
                grad += jp.transpose() * e * self.point_weight;
            }
        }
        let damping = 1e-9 * hess.trace().max(1e-300);
        for i in 0..6 {
            hess[(i, i)] += damping;
        }
        let delta = hess
            .cholesky()
            .map(|c| c.solve(&(-grad)))
            .ok_or_else(|| Error::DegenerateInput("point-to-plane system is singular".into()))?;
        // Early associations are poor; shorten long steps as a whole.
        let angle = delta.fixed_rows::<3>(0).norm();
        let delta = if angle > self.max_step_rad { delta * (self.max_step_rad / angle) } else { delta };
        Ok((Vector3::new(delta[0], delta[1], delta[2]), Vector3::new(delta[3], delta[4], delta[5])))
    }
}

impl Refiner for IcpRefiner {
    fn refine_step(&self, mesh: &TriangleMesh, obs: &Observation, current: &ScaledModelPose) -> Result<RefineStep> {
        let scaled = mesh.scaled(current.scale());
        let (depth, mask) = rasterize(&scaled, &obs.intrinsics, &current.pose)?;
        let overlap = mask.intersection_count(&obs.mask);
        if overlap < self.min_overlap {
            return Err(Error::InsufficientOverlap(overlap));
        }
        let (targets, normals) = observed_points_with_normals(obs);
        if targets.len() < self.min_overlap {
            return Err(Error::InsufficientOverlap(targets.len()));
        }
        let tree = KdTree::new(&targets);
        let stride = self.stride.max(1);
        let k = &obs.intrinsics;
        let source: Vec<Vector3<f64>> = mask
            .pixels()
            .filter(|(x, y)| x % stride == 0 && y % stride == 0)
            .filter_map(|(x, y)| k.backproject(&Vector2::new(x as f64, y as f64), depth.get(x, y)).ok())
            .collect();
        let origin = *current.pose.translation();
        let mut rotation = Matrix3::identity();
        let mut translation = Vector3::zeros();
        for _ in 0..self.inner_iterations.max(1) {
            let t = origin + translation;
            let moved: Vec<Vector3<f64>> = source.iter().map(|x| rotation * (x - origin) + t).collect();
            let (w, dt) = self.gauss_newton(&moved, &t, &tree, &targets, &normals)?;
            rotation = Rotation3::new(w).into_inner() * rotation;
            translation += dt;
            if w.norm() < 1e-7 && dt.norm() < 1e-8 {
                break;
            }
        }
        let w = Rotation3::from_matrix_unchecked(rotation).scaled_axis();
        Ok(RefineStep {
            delta_rotation: w,
            delta_translation: translation,
            delta_scale: 1.0,
        })
    }
}
