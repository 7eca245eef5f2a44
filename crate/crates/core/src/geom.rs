//! Rigid and similarity transforms, the pinhole camera, and the closed-form
//! scale estimator.
//!
//! Everything here is generic over [`Real`] so the same code serves `f32` and
//! `f64` callers. The crate root exposes `f64` aliases.

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Entry-wise tolerance for accepting a matrix as a rotation before it is
/// re-orthonormalized.
const ROTATION_INPUT_TOL: f64 = 1e-4;

/// An element of SE(3): `x ↦ R·x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rigid3<T: Real> {
    rotation: Matrix3<T>,
    translation: Vector3<T>,
}

impl<T: Real> Default for Rigid3<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> Rigid3<T> {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform from a (nearly) orthonormal matrix, projecting it
    /// onto SO(3) with a polar decomposition.
    pub fn new(rotation: Matrix3<T>, translation: Vector3<T>) -> Result<Self> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidRotation("non-finite entry".into()));
        }
        if rotation.determinant() <= T::zero() {
            return Err(Error::InvalidRotation("determinant is not positive".into()));
        }
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        let worst = gram.amax();
        if worst > T::lit(ROTATION_INPUT_TOL) {
            return Err(Error::InvalidRotation(format!(
                "RᵀR deviates from identity by {}",
                worst.as_f64()
            )));
        }
        Ok(Self {
            rotation: orthonormalize(&rotation),
            translation,
        })
    }

    /// Builds a transform from a matrix already known to be in SO(3).
    pub fn from_rotation_unchecked(rotation: Matrix3<T>, translation: Vector3<T>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<T>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation given as an axis-angle vector (radians).
    pub fn from_axis_angle(axis_angle: Vector3<T>, translation: Vector3<T>) -> Self {
        Self {
            rotation: Rotation3::from_scaled_axis(axis_angle).into_inner(),
            translation,
        }
    }

    /// Row-major 3×3 rotation plus translation, as stored in pose files.
    pub fn from_row_major(r: &[T; 9], t: &[T; 3]) -> Result<Self> {
        let rotation = Matrix3::from_row_slice(r);
        Self::new(rotation, Vector3::new(t[0], t[1], t[2]))
    }

    pub fn rotation(&self) -> &Matrix3<T> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<T> {
        &self.translation
    }

    pub fn rotation_row_major(&self) -> [T; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)],
            r[(1, 0)], r[(1, 1)], r[(1, 2)],
            r[(2, 0)], r[(2, 1)], r[(2, 2)],
        ]
    }

    pub fn translation_array(&self) -> [T; 3] {
        [self.translation.x, self.translation.y, self.translation.z]
    }

    /// Rotation as an axis-angle vector with norm in `[0, π]`.
    pub fn axis_angle(&self) -> Vector3<T> {
        Rotation3::from_matrix_unchecked(self.rotation).scaled_axis()
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn apply_vector(&self, v: &Vector3<T>) -> Vector3<T> {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// `(Rᵀ, −Rᵀt)`.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            translation: -(rt * self.translation),
            rotation: rt,
        }
    }

    /// Projects the rotation back onto SO(3); useful after long update chains.
    pub fn renormalized(&self) -> Self {
        Self {
            rotation: orthonormalize(&self.rotation),
            translation: self.translation,
        }
    }

    pub fn to_homogeneous(&self) -> Matrix4<T> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Largest entry-wise deviation from the SO(3) constraints.
    pub fn rotation_defect(&self) -> T {
        let gram = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        let det = (self.rotation.determinant() - T::one()).abs();
        gram.max(det)
    }

    pub fn cast<U: Real>(&self) -> Rigid3<U> {
        Rigid3 {
            rotation: self.rotation.map(|v| U::lit(v.as_f64())),
            translation: self.translation.map(|v| U::lit(v.as_f64())),
        }
    }
}

/// Nearest rotation matrix in the Frobenius sense.
pub fn orthonormalize<T: Real>(m: &Matrix3<T>) -> Matrix3<T> {
    let svd = m.svd(true, true);
    let mut u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    if (u * v_t).determinant() < T::zero() {
        u.column_mut(2).neg_mut();
    }
    u * v_t
}

/// `(t_anchor)⁻¹ ∘ t_query`.
///
/// Both inputs are camera poses expressed in the model frame
/// (model-from-camera). The result is the query camera's pose in the anchor
/// camera frame: it maps query-frame coordinates to anchor-frame coordinates.
/// Callers holding camera-from-model poses invert them first.
pub fn relative_pose<T: Real>(t_anchor: &Rigid3<T>, t_query: &Rigid3<T>) -> Rigid3<T> {
    // RᵀR is only identity up to rounding; equal poses should give exactly I.
    if t_anchor == t_query {
        return Rigid3::identity();
    }
    t_anchor.inverse().compose(t_query)
}

/// `(T_C^W)⁻¹ ∘ T_O^W`: object pose in the camera frame from the camera pose
/// in the world (world-from-camera) and the object pose in the world
/// (world-from-object).
pub fn chain_object_pose<T: Real>(t_cam_world: &Rigid3<T>, t_obj_world: &Rigid3<T>) -> Rigid3<T> {
    t_cam_world.inverse().compose(t_obj_world)
}

/// Rotation angle of `R`, computed with `atan2` so small angles stay accurate.
pub fn rotation_angle<T: Real>(r: &Matrix3<T>) -> T {
    let two = T::lit(2.0);
    let cos = (r.trace() - T::one()) / two;
    let s = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    let sin = s.norm() / two;
    sin.atan2(cos).max(T::zero()).min(T::pi())
}

/// Geodesic distance on SO(3) between the rotation parts, in radians.
pub fn so3_geodesic_distance<T: Real>(a: &Rigid3<T>, b: &Rigid3<T>) -> T {
    rotation_angle(&(a.rotation * b.rotation.transpose()))
}

/// Camera pose (camera-from-world) looking from `eye` at `target`.
///
/// Camera axes follow the usual vision convention: +z forward, +x right,
/// +y down. `up` is the world up direction; when it is (nearly) parallel to
/// the viewing direction a fallback axis is used so the result is always
/// well defined.
pub fn look_at<T: Real>(eye: &Vector3<T>, target: &Vector3<T>, up: &Vector3<T>) -> Rigid3<T> {
    let forward = (target - eye).normalize();
    let mut right = forward.cross(up);
    if right.norm() < T::lit(1e-6) {
        let fallback = if forward.y.abs() < T::lit(0.9) {
            Vector3::y()
        } else {
            Vector3::x()
        };
        right = forward.cross(&fallback);
    }
    let right = right.normalize();
    let down = forward.cross(&right);
    let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    Rigid3 {
        translation: -(rotation * eye),
        rotation,
    }
}

/// Similarity alignment of a normalized model: `p ↦ R·(s·p) + t`.
///
/// The scale acts about the model origin; `t` is the metric translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaledPose<T: Real> {
    scale: T,
    pub pose: Rigid3<T>,
}

impl<T: Real> ScaledPose<T> {
    pub fn new(scale: T, pose: Rigid3<T>) -> Result<Self> {
        if !(scale > T::zero()) || !scale.is_finite() {
            return Err(Error::NonPositiveScale(scale.as_f64()));
        }
        Ok(Self { scale, pose })
    }

    pub fn unit(pose: Rigid3<T>) -> Self {
        Self {
            scale: T::one(),
            pose,
        }
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<T>) -> Vector3<T> {
        self.pose.apply(&(p * self.scale))
    }

    /// Inverse map from the camera frame back into model coordinates.
    #[inline]
    pub fn unapply(&self, x: &Vector3<T>) -> Vector3<T> {
        self.pose.inverse().apply(x) / self.scale
    }

    /// Scales the whole aligned model about the camera origin by `factor`:
    /// `s ← s·factor`, `t ← factor·t`. The image projection is unchanged.
    pub fn scaled_about_camera(&self, factor: T) -> Result<Self> {
        let pose = Rigid3::from_rotation_unchecked(self.pose.rotation, self.pose.translation * factor);
        Self::new(self.scale * factor, pose)
    }
}

/// Apply a similarity pose to a model point.
pub fn apply_similarity<T: Real>(sp: &ScaledPose<T>, p: &Vector3<T>) -> Vector3<T> {
    sp.apply(p)
}

/// Pinhole intrinsics with the image size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pinhole<T: Real> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: u32,
    pub height: u32,
}

impl<T: Real> Pinhole<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: u32, height: u32) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidIntrinsics(m.to_string()));
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return bad("focal lengths must be positive");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be non-zero");
        }
        let w = T::lit(self.width as f64);
        let h = T::lit(self.height as f64);
        if !(self.cx >= T::zero() && self.cx < w && self.cy >= T::zero() && self.cy < h) {
            return bad("principal point outside the image");
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<T> {
        let (z, o) = (T::zero(), T::one());
        Matrix3::new(self.fx, z, self.cx, z, self.fy, self.cy, z, z, o)
    }

    pub fn diagonal(&self) -> T {
        T::lit(((self.width as f64).powi(2) + (self.height as f64).powi(2)).sqrt())
    }

    /// Pixel coordinates of a camera-frame point. The result may fall outside
    /// the image.
    #[inline]
    pub fn project(&self, p: &Vector3<T>) -> Result<Vector2<T>> {
        if !(p.z > T::zero()) {
            return Err(Error::NonPositiveDepth);
        }
        Ok(self.project_unchecked(p))
    }

    #[inline]
    pub fn project_unchecked(&self, p: &Vector3<T>) -> Vector2<T> {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Viewing ray through `pixel`, normalized to unit depth: `K⁻¹·[u, v, 1]ᵀ`.
    #[inline]
    pub fn ray(&self, pixel: &Vector2<T>) -> Vector3<T> {
        Vector3::new(
            (pixel.x - self.cx) / self.fx,
            (pixel.y - self.cy) / self.fy,
            T::one(),
        )
    }

    /// `depth · K⁻¹ · [u, v, 1]ᵀ`.
    #[inline]
    pub fn backproject(&self, pixel: &Vector2<T>, depth: T) -> Result<Vector3<T>> {
        if !(depth > T::zero()) {
            return Err(Error::NonPositiveDepth);
        }
        Ok(self.ray(pixel) * depth)
    }

    pub fn contains(&self, pixel: &Vector2<T>) -> bool {
        pixel.x >= T::zero()
            && pixel.y >= T::zero()
            && pixel.x <= T::lit(self.width as f64 - 1.0)
            && pixel.y <= T::lit(self.height as f64 - 1.0)
    }
}

/// Which coordinate frame a point set lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Object,
    Camera,
    World,
}

/// A frame-tagged set of finite 3D points.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet<T: Real> {
    pub frame: Frame,
    points: Vec<Vector3<T>>,
}

impl<T: Real> PointSet<T> {
    pub fn new(frame: Frame, points: Vec<Vector3<T>>) -> Result<Self> {
        if points.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite);
        }
        Ok(Self { frame, points })
    }

    pub fn points(&self) -> &[Vector3<T>] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Vector3<T>> {
        self.points
    }

    pub fn transformed(&self, t: &Rigid3<T>, frame: Frame) -> Self {
        Self {
            frame,
            points: self.points.iter().map(|p| t.apply(p)).collect(),
        }
    }
}

impl<T: Real> std::ops::Deref for PointSet<T> {
    type Target = [Vector3<T>];
    fn deref(&self) -> &[Vector3<T>] {
        &self.points
    }
}

/// A model point (normalized model frame) and the pixel observing it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Corr2D3D<T: Real> {
    pub pixel: Vector2<T>,
    pub point: Vector3<T>,
}

/// Closed-form minimizer of `Σ‖α·P̂ᵢ − Pᵢ‖²`: `α* = Σ⟨P̂ᵢ, Pᵢ⟩ / Σ‖P̂ᵢ‖²`.
///
/// `model` holds the posed model points P̂ᵢ and `observed` the lifted
/// observation points Pᵢ, both in the camera frame. A non-positive optimum
/// means the two sets point in opposite directions and is reported as an
/// error rather than clamped.
pub fn estimate_scale<T: Real>(model: &[Vector3<T>], observed: &[Vector3<T>]) -> Result<T> {
    if model.is_empty() || model.len() != observed.len() {
        return Err(Error::DegenerateInput(format!(
            "scale estimation needs equal non-empty sets (got {} and {})",
            model.len(),
            observed.len()
        )));
    }
    let (num, den) = model
        .iter()
        .zip(observed)
        .fold((T::zero(), T::zero()), |(num, den), (m, o)| {
            (num + m.dot(o), den + m.norm_squared())
        });
    if !(den > T::zero()) {
        return Err(Error::DegenerateInput("all model points at the origin".into()));
    }
    let alpha = num / den;
    if !(alpha > T::zero()) {
        return Err(Error::NonPositiveScale(alpha.as_f64()));
    }
    Ok(alpha)
}

/// The least-squares objective minimized by [`estimate_scale`].
pub fn scale_objective<T: Real>(model: &[Vector3<T>], observed: &[Vector3<T>], alpha: T) -> T {
    model
        .iter()
        .zip(observed)
        .fold(T::zero(), |acc, (m, o)| acc + (m * alpha - o).norm_squared())
}
