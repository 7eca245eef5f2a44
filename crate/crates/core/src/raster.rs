//! Z-buffered software rasterizer for depth and coverage, spherical viewpoint
//! sampling, template rendering and visibility.
//!
//! Pixel `(u, v)` is sampled at its center, which has image coordinates
//! `(u, v)`; this matches [`CameraIntrinsics::project`]. Coverage uses the
//! top-left fill rule and depth is the exact ray/plane intersection, so two
//! runs on the same input produce bit-identical buffers.

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geom::look_at;
use crate::mesh::TriangleMesh;
use crate::{CameraIntrinsics, RigidTransform};

/// Near clipping plane, in the mesh's length unit.
const NEAR: f64 = 1e-4;

/// Per-pixel depth along the camera z axis; `0` marks "no surface".
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width as usize * height as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<f64>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::Format("depth buffer size mismatch".into()));
        }
        if data.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::Format("depth values must be finite and non-negative".into()));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, d: f64) {
        self.data[(y * self.width + x) as usize] = d;
    }

    /// Depth at the nearest pixel, if it holds a surface.
    pub fn nearest(&self, pixel: &Vector2<f64>) -> Option<f64> {
        let (x, y) = (pixel.x.round(), pixel.y.round());
        if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
            return None;
        }
        let d = self.get(x as u32, y as u32);
        (d > 0.0).then_some(d)
    }

    /// Sub-pixel depth lookup.
    ///
    /// Inverse depth is interpolated bilinearly, which is exact inside a
    /// planar patch. Falls back to the nearest pixel when a neighbor is empty
    /// or the four samples straddle a depth discontinuity.
    pub fn sample(&self, pixel: &Vector2<f64>) -> Option<f64> {
        let (x0, y0) = (pixel.x.floor(), pixel.y.floor());
        if x0 < 0.0 || y0 < 0.0 || x0 + 1.0 >= self.width as f64 || y0 + 1.0 >= self.height as f64 {
            return self.nearest(pixel);
        }
        let (x0, y0) = (x0 as u32, y0 as u32);
        let d = [
            self.get(x0, y0),
            self.get(x0 + 1, y0),
            self.get(x0, y0 + 1),
            self.get(x0 + 1, y0 + 1),
        ];
        let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = d.iter().cloned().fold(0.0, f64::max);
        if lo <= 0.0 || hi > lo * 1.02 {
            return self.nearest(pixel);
        }
        let (fx, fy) = (pixel.x - x0 as f64, pixel.y - y0 as f64);
        let inv = (1.0 - fx) * (1.0 - fy) / d[0]
            + fx * (1.0 - fy) / d[1]
            + (1.0 - fx) * fy / d[2]
            + fx * fy / d[3];
        Some(1.0 / inv)
    }

    /// Coverage of the non-zero pixels.
    pub fn support(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&d| d > 0.0).collect(),
        }
    }
}

/// Binary image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl Mask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<bool>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::Format("mask size mismatch".into()));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.data[(y * self.width + x) as usize] = v;
    }

    /// Value at the nearest pixel; `false` outside the image.
    pub fn at(&self, pixel: &Vector2<f64>) -> bool {
        let (x, y) = (pixel.x.round(), pixel.y.round());
        x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64 && self.get(x as u32, y as u32)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Covered pixel coordinates in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i as u32 % w, i as u32 / w))
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        self.data.iter().zip(&other.data).filter(|(a, b)| **a && **b).count()
    }

    pub fn union_count(&self, other: &Mask) -> usize {
        self.data.iter().zip(&other.data).filter(|(a, b)| **a || **b).count()
    }

    /// Intersection over union; two empty masks count as identical.
    pub fn iou(&self, other: &Mask) -> f64 {
        let union = self.union_count(other);
        if union == 0 {
            1.0
        } else {
            self.intersection_count(other) as f64 / union as f64
        }
    }

    pub fn touches_border(&self) -> bool {
        let (w, h) = (self.width, self.height);
        (0..w).any(|x| self.get(x, 0) || self.get(x, h - 1)) || (0..h).any(|y| self.get(0, y) || self.get(w - 1, y))
    }
}

/// Depth plus the index of the mesh that produced each pixel.
#[derive(Clone, Debug)]
pub struct LabelRender {
    pub depth: DepthMap,
    /// `None` where nothing was drawn.
    pub labels: Vec<Option<u32>>,
}

impl LabelRender {
    pub fn mask_of(&self, label: u32) -> Mask {
        Mask {
            width: self.depth.width,
            height: self.depth.height,
            data: self.labels.iter().map(|l| *l == Some(label)).collect(),
        }
    }
}

struct ZBuffer {
    width: u32,
    height: u32,
    depth: Vec<f64>,
    labels: Vec<Option<u32>>,
    /// Per-label footprint ignoring occlusion, when tracked.
    coverage: Vec<Vec<bool>>,
}

impl ZBuffer {
    fn new(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            depth: vec![f64::INFINITY; n],
            labels: vec![None; n],
            coverage: Vec::new(),
        }
    }

    fn draw_mesh(&mut self, mesh: &TriangleMesh, k: &CameraIntrinsics, camera_from_object: &RigidTransform, label: u32) {
        let cam: Vec<Vector3<f64>> = mesh.vertices().iter().map(|v| camera_from_object.apply(v)).collect();
        for face in mesh.faces() {
            let tri = face.map(|i| cam[i as usize]);
            self.draw_triangle(&tri, k, label);
        }
    }

    fn draw_triangle(&mut self, tri: &[Vector3<f64>; 3], k: &CameraIntrinsics, label: u32) {
        if tri.iter().all(|v| v.z <= NEAR) {
            return;
        }
        let normal = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
        let offset = normal.dot(&tri[0]);
        // Plane through the camera center: the triangle is seen edge-on.
        if offset.abs() <= 1e-12 * normal.norm() * tri[0].norm().max(1e-12) {
            return;
        }
        let clipped = clip_near(tri);
        if clipped.len() < 3 {
            return;
        }
        let screen: Vec<Vector2<f64>> = clipped.iter().map(|p| k.project_unchecked(p)).collect();
        for i in 1..screen.len() - 1 {
            self.fill(&[screen[0], screen[i], screen[i + 1]], &normal, offset, k, label);
        }
    }

    fn fill(&mut self, s: &[Vector2<f64>; 3], normal: &Vector3<f64>, offset: f64, k: &CameraIntrinsics, label: u32) {
        let area = edge(&s[0], &s[1], &s[2]);
        if area == 0.0 || !area.is_finite() {
            return;
        }
        let v = if area > 0.0 { [s[0], s[1], s[2]] } else { [s[0], s[2], s[1]] };
        let lo_x = v.iter().map(|p| p.x).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let hi_x = v.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max).floor().min(self.width as f64 - 1.0);
        let lo_y = v.iter().map(|p| p.y).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let hi_y = v.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max).floor().min(self.height as f64 - 1.0);
        if lo_x > hi_x || lo_y > hi_y {
            return;
        }
        let top_left = [is_top_left(&v[0], &v[1]), is_top_left(&v[1], &v[2]), is_top_left(&v[2], &v[0])];
        for y in lo_y as u32..=hi_y as u32 {
            for x in lo_x as u32..=hi_x as u32 {
                let p = Vector2::new(x as f64, y as f64);
                let e = [edge(&v[0], &v[1], &p), edge(&v[1], &v[2], &p), edge(&v[2], &v[0], &p)];
                let inside = e.iter().zip(&top_left).all(|(&e, &tl)| e > 0.0 || (e == 0.0 && tl));
                if !inside {
                    continue;
                }
                let denom = normal.dot(&k.ray(&p));
                if denom == 0.0 {
                    continue;
                }
                let z = offset / denom;
                if !(z > NEAR) {
                    continue;
                }
                let idx = (y * self.width + x) as usize;
                if let Some(c) = self.coverage.get_mut(label as usize) {
                    c[idx] = true;
                }
                if z < self.depth[idx] {
                    self.depth[idx] = z;
                    self.labels[idx] = Some(label);
                }
            }
        }
    }

    fn finish(self) -> LabelRender {
        let depth = self.depth.into_iter().map(|d| if d.is_finite() { d } else { 0.0 }).collect();
        LabelRender {
            depth: DepthMap {
                width: self.width,
                height: self.height,
                data: depth,
            },
            labels: self.labels,
        }
    }
}

/// Twice the signed area of `(a, b, p)`; positive when `p` is on the
/// interior side of edge `a → b` for a positively oriented triangle.
#[inline]
fn edge(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Top-left rule with the image y axis pointing down: the interior normal of
/// a left edge points to +x, that of a top edge to +y.
#[inline]
fn is_top_left(a: &Vector2<f64>, b: &Vector2<f64>) -> bool {
    let nx = -(b.y - a.y);
    let ny = b.x - a.x;
    nx > 0.0 || (nx == 0.0 && ny > 0.0)
}

/// Sutherland–Hodgman against `z ≥ NEAR`.
fn clip_near(tri: &[Vector3<f64>; 3]) -> Vec<Vector3<f64>> {
    if tri.iter().all(|v| v.z > NEAR) {
        return tri.to_vec();
    }
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        let (ina, inb) = (a.z > NEAR, b.z > NEAR);
        if ina {
            out.push(a);
        }
        if ina != inb {
            let t = (NEAR - a.z) / (b.z - a.z);
            let mut p = a + (b - a) * t;
            p.z = NEAR * (1.0 + 1e-9);
            out.push(p);
        }
    }
    out
}

/// Renders several meshes into one z-buffer. Each entry is a mesh and its
/// camera-from-object pose; labels are entry indices.
pub fn render_scene(items: &[(&TriangleMesh, RigidTransform)], k: &CameraIntrinsics) -> LabelRender {
    let mut zb = ZBuffer::new(k.width, k.height);
    for (i, (mesh, pose)) in items.iter().enumerate() {
        zb.draw_mesh(mesh, k, pose, i as u32);
    }
    zb.finish()
}

/// Like [`render_scene`], plus each entry's own footprint as if it were
/// rendered alone.
pub fn render_scene_with_footprints(items: &[(&TriangleMesh, RigidTransform)], k: &CameraIntrinsics) -> (LabelRender, Vec<Mask>) {
    let mut zb = ZBuffer::new(k.width, k.height);
    let n = k.width as usize * k.height as usize;
    zb.coverage = vec![vec![false; n]; items.len()];
    for (i, (mesh, pose)) in items.iter().enumerate() {
        zb.draw_mesh(mesh, k, pose, i as u32);
    }
    let coverage = std::mem::take(&mut zb.coverage);
    let masks = coverage
        .into_iter()
        .map(|data| Mask {
            width: k.width,
            height: k.height,
            data,
        })
        .collect();
    (zb.finish(), masks)
}

/// Depth and coverage of a single mesh.
pub fn rasterize(mesh: &TriangleMesh, k: &CameraIntrinsics, camera_from_object: &RigidTransform) -> Result<(DepthMap, Mask)> {
    let mut zb = ZBuffer::new(k.width, k.height);
    zb.draw_mesh(mesh, k, camera_from_object, 0);
    let render = zb.finish();
    let mask = render.depth.support();
    if mask.is_empty() {
        return Err(Error::EmptyRender);
    }
    Ok((render.depth, mask))
}

/// Coverage only. An empty render yields an all-false mask with `empty` set
/// instead of an error.
#[derive(Clone, Debug)]
pub struct MaskRender {
    pub mask: Mask,
    pub empty: bool,
}

pub fn render_mask(mesh: &TriangleMesh, k: &CameraIntrinsics, camera_from_object: &RigidTransform) -> MaskRender {
    match rasterize(mesh, k, camera_from_object) {
        Ok((_, mask)) => MaskRender { mask, empty: false },
        Err(_) => MaskRender {
            mask: Mask::empty(k.width, k.height),
            empty: true,
        },
    }
}

/// `n` camera poses (camera-from-object) on a sphere of `radius`, directions
/// on a Fibonacci lattice, each looking at the origin with world +z as up.
pub fn sample_viewpoints(n: usize, radius: f64) -> Result<Vec<RigidTransform>> {
    if n < 4 || !(radius > 0.0) {
        return Err(Error::InvalidConfig(format!("need n ≥ 4 and radius > 0 (got {n}, {radius})")));
    }
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    Ok((0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let theta = golden * i as f64;
            let dir = Vector3::new(r * theta.cos(), r * theta.sin(), z);
            look_at(&(dir * radius), &Vector3::zeros(), &Vector3::z())
        })
        .collect())
}

/// The six axis-aligned views (±x, ±y, ±z) at `radius`.
pub fn octahedral_viewpoints(radius: f64) -> Vec<RigidTransform> {
    [Vector3::x(), -Vector3::x(), Vector3::y(), -Vector3::y(), Vector3::z(), -Vector3::z()]
        .iter()
        .map(|d| look_at(&(d * radius), &Vector3::zeros(), &Vector3::z()))
        .collect()
}

/// Camera distance at which a sphere of `bound_radius` spans `fill` of the
/// smaller image dimension.
pub fn template_distance(bound_radius: f64, k: &CameraIntrinsics, fill: f64) -> f64 {
    let half_extent = 0.5 * fill * k.width.min(k.height) as f64;
    let f = k.fx.max(k.fy);
    bound_radius * (1.0 + (f / half_extent).powi(2)).sqrt()
}

/// A rendered view of the model used for matching and hypothesis generation.
#[derive(Clone, Debug)]
pub struct TemplateView {
    pub camera_from_object: RigidTransform,
    /// Scale of the rendered geometry relative to the mesh whose frame
    /// [`TemplateView::lift_to_model`] reports (1 when rendered as given).
    pub model_scale: f64,
    pub intrinsics: CameraIntrinsics,
    pub depth: DepthMap,
    pub mask: Mask,
}

impl TemplateView {
    /// Lifts a template pixel to model coordinates using the template depth.
    pub fn lift_to_model(&self, pixel: &Vector2<f64>) -> Option<Vector3<f64>> {
        let d = self.depth.sample(pixel)?;
        let cam = self.intrinsics.backproject(pixel, d).ok()?;
        Some(self.camera_from_object.inverse().apply(&cam) / self.model_scale)
    }

    /// The same view of the mesh scaled by `factor` about its origin: depths
    /// and translation scale, pixels are unchanged, and lifted points are
    /// reported in the scaled mesh's frame.
    pub fn rescaled(&self, factor: f64) -> Self {
        let pose = RigidTransform::from_rotation_unchecked(
            *self.camera_from_object.rotation(),
            self.camera_from_object.translation() * factor,
        );
        let data = self.depth.data.iter().map(|d| d * factor).collect();
        Self {
            camera_from_object: pose,
            model_scale: self.model_scale,
            intrinsics: self.intrinsics,
            depth: DepthMap {
                width: self.depth.width,
                height: self.depth.height,
                data,
            },
            mask: self.mask.clone(),
        }
    }
}

pub fn render_templates(mesh: &TriangleMesh, k: &CameraIntrinsics, views: &[RigidTransform]) -> Result<Vec<TemplateView>> {
    use rayon::prelude::*;
    views
        .par_iter()
        .map(|pose| {
            let (depth, mask) = rasterize(mesh, k, pose)?;
            Ok(TemplateView {
                camera_from_object: *pose,
                model_scale: 1.0,
                intrinsics: *k,
                depth,
                mask,
            })
        })
        .collect()
}

/// A view of `mesh` rendered under a similarity pose. Lifted points come back
/// in the unscaled mesh frame.
pub fn render_view(mesh: &TriangleMesh, k: &CameraIntrinsics, pose: &crate::ScaledModelPose) -> Result<TemplateView> {
    let (depth, mask) = rasterize(&mesh.scaled(pose.scale()), k, &pose.pose)?;
    Ok(TemplateView {
        camera_from_object: pose.pose,
        model_scale: pose.scale(),
        intrinsics: *k,
        depth,
        mask,
    })
}

/// `n` Fibonacci views at the distance where the mesh fills 60 % of the
/// image, rendered.
pub fn default_templates(mesh: &TriangleMesh, k: &CameraIntrinsics, n: usize) -> Result<Vec<TemplateView>> {
    let radius = template_distance(mesh.bounding_radius(), k, 0.6);
    render_templates(mesh, k, &sample_viewpoints(n, radius)?)
}

/// Fraction of the target's unoccluded footprint that remains visible in the
/// full scene. `scene` holds meshes with world-from-object poses.
pub fn visibility_fraction(
    scene: &[(&TriangleMesh, RigidTransform)],
    target_index: usize,
    k: &CameraIntrinsics,
    camera_from_world: &RigidTransform,
) -> f64 {
    let items: Vec<(&TriangleMesh, RigidTransform)> =
        scene.iter().map(|(m, w)| (*m, camera_from_world.compose(w))).collect();
    let alone = render_scene(&items[target_index..=target_index], k);
    let footprint = alone.labels.iter().filter(|l| l.is_some()).count();
    if footprint == 0 {
        return 0.0;
    }
    let full = render_scene(&items, k);
    let visible = full.labels.iter().filter(|l| **l == Some(target_index as u32)).count();
    (visible as f64 / footprint as f64).clamp(0.0, 1.0)
}

/// RGB-D frame with the target's segmentation mask.
#[derive(Clone, Debug)]
pub struct Observation {
    pub depth: DepthMap,
    pub mask: Mask,
    pub intrinsics: CameraIntrinsics,
    pub color: Option<image::RgbImage>,
}

impl Observation {
    /// Checks dimensions and removes mask pixels without depth.
    pub fn new(depth: DepthMap, mask: Mask, intrinsics: CameraIntrinsics) -> Result<Self> {
        intrinsics.validate()?;
        if depth.width != intrinsics.width
            || depth.height != intrinsics.height
            || mask.width != depth.width
            || mask.height != depth.height
        {
            return Err(Error::Format("observation dimensions disagree with intrinsics".into()));
        }
        let mut mask = mask;
        for (m, d) in mask.data.iter_mut().zip(&depth.data) {
            if *d <= 0.0 {
                *m = false;
            }
        }
        Ok(Self {
            depth,
            mask,
            intrinsics,
            color: None,
        })
    }

    /// Camera-frame point at a (sub-)pixel inside the mask.
    pub fn lift(&self, pixel: &Vector2<f64>) -> Option<Vector3<f64>> {
        if !self.mask.at(pixel) {
            return None;
        }
        let d = self.depth.sample(pixel)?;
        self.intrinsics.backproject(pixel, d).ok()
    }

    /// All masked pixels lifted to the camera frame, optionally strided.
    pub fn masked_points(&self, stride: u32) -> Vec<(Vector2<f64>, Vector3<f64>)> {
        let stride = stride.max(1);
        self.mask
            .pixels()
            .filter(|(x, y)| x % stride == 0 && y % stride == 0)
            .filter_map(|(x, y)| {
                let px = Vector2::new(x as f64, y as f64);
                let d = self.depth.get(x, y);
                self.intrinsics.backproject(&px, d).ok().map(|p| (px, p))
            })
            .collect()
    }
}

/// Renders the mesh under a similarity pose into an observation whose mask
/// is the object's full coverage.
pub fn render_observation(
    mesh: &TriangleMesh,
    k: &CameraIntrinsics,
    pose: &crate::ScaledModelPose,
) -> Result<Observation> {
    let scaled = mesh.scaled(pose.scale());
    let (depth, mask) = rasterize(&scaled, k, &pose.pose)?;
    Observation::new(depth, mask, *k)
}
