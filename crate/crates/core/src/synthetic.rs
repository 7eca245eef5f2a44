//! Forward-rendered test scenes with known ground truth.

use nalgebra::{Rotation3, Unit, UnitQuaternion, Vector3, Vector4};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::mesh::TriangleMesh;
use crate::raster::{render_observation, Observation};
use crate::{CameraIntrinsics, RigidTransform, ScaledModelPose};

/// Haar-uniform rotation.
pub fn random_rotation(rng: &mut impl Rng) -> Rotation3<f64> {
    let q: Vector4<f64> = Vector4::from_fn(|_, _| StandardNormal.sample(rng));
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::from_vector(q)).to_rotation_matrix()
}

/// Uniform direction on the unit sphere.
pub fn random_unit(rng: &mut impl Rng) -> Unit<Vector3<f64>> {
    loop {
        let v: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
        if v.norm() > 1e-9 {
            return Unit::new_normalize(v);
        }
    }
}

/// Rotates about a random axis by exactly `rot_deg` (about the object
/// origin), shifts by exactly `trans` in a random direction and multiplies the
/// scale by `scale_factor` about the model origin.
pub fn perturb(pose: &ScaledModelPose, rot_deg: f64, trans: f64, scale_factor: f64, rng: &mut impl Rng) -> Result<ScaledModelPose> {
    let dr = Rotation3::from_axis_angle(&random_unit(rng), rot_deg.to_radians());
    let t = pose.pose.translation() + random_unit(rng).into_inner() * trans;
    ScaledModelPose::new(
        pose.scale() * scale_factor,
        RigidTransform::from_rotation_unchecked(dr.matrix() * pose.pose.rotation(), t),
    )
}

/// The same object pose seen after the camera orbits the object origin by
/// `deg` about a random axis.
pub fn orbit(pose: &RigidTransform, deg: f64, rng: &mut impl Rng) -> RigidTransform {
    let dr = Rotation3::from_axis_angle(&random_unit(rng), deg.to_radians());
    RigidTransform::from_rotation_unchecked(dr.matrix() * pose.rotation(), *pose.translation())
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub mesh_normalized: TriangleMesh,
    pub gt: ScaledModelPose,
    pub obs: Observation,
}

/// Renders `mesh_normalized` at scale `scale` with a random rotation, the
/// origin at `distance` along the optical axis with a small lateral offset.
/// Re-draws until the mask stays clear of the image border.
pub fn random_scene(
    mesh_normalized: &TriangleMesh,
    k: &CameraIntrinsics,
    scale: f64,
    distance: f64,
    rng: &mut impl Rng,
) -> Result<SyntheticScene> {
    loop {
        let r = random_rotation(rng);
        let lateral = 0.05 * distance;
        let t = Vector3::new(rng.random_range(-lateral..lateral), rng.random_range(-lateral..lateral), distance);
        let gt = ScaledModelPose::new(scale, RigidTransform::from_rotation_unchecked(r.into_inner(), t))?;
        let obs = render_observation(mesh_normalized, k, &gt)?;
        if !obs.mask.touches_border() && obs.mask.count() > 0 {
            return Ok(SyntheticScene {
                mesh_normalized: mesh_normalized.clone(),
                gt,
                obs,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::so3_geodesic_distance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perturbation_magnitudes_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = ScaledModelPose::new(0.1, RigidTransform::from_translation(Vector3::new(0.0, 0.0, 1.0))).unwrap();
        for _ in 0..20 {
            let p = perturb(&base, 10.0, 0.05, 1.1, &mut rng).unwrap();
            assert!((so3_geodesic_distance(&p.pose, &base.pose).to_degrees() - 10.0).abs() < 1e-9);
            assert!(((p.pose.translation() - base.pose.translation()).norm() - 0.05).abs() < 1e-12);
            assert!((p.scale() - 0.11).abs() < 1e-15);
        }
    }

    #[test]
    fn random_rotations_are_proper() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let r = random_rotation(&mut rng);
            assert!((r.matrix().determinant() - 1.0).abs() < 1e-12);
        }
    }
}
