//! Randomized multi-object scenes with camera rigs, written out as a
//! BOP-style dataset (depth, masks, GT poses), and pose-distribution
//! statistics over such a dataset.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Rotation3, Vector3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{chain_object_pose, look_at};
use crate::io::{read_json, save_depth_png, save_mask_png, save_mesh, write_json, IntrinsicsJson, DEPTH_UNITS_PER_METER};
use crate::mesh::TriangleMesh;
use crate::raster::render_scene_with_footprints;
use crate::synthetic::{random_rotation, random_unit};
use crate::{CameraIntrinsics, RigidTransform};

/// Rejections allowed per scene before placement gives up.
pub const MAX_REJECTIONS: usize = 10_000;
/// Allowed bounding-sphere interpenetration, relative to the smaller radius.
pub const OVERLAP_TOLERANCE: f64 = 0.1;
const GROUND_SIZE: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub target_count: usize,
    pub occluder_count: usize,
    pub camera_count: usize,
    pub placement_bounds: Aabb,
    /// Rest every object on the plane `z = placement_bounds.min[2]`.
    pub drop_to_plane: bool,
    pub eccentric_noise_sigma: f64,
    pub roll_noise_sigma: f64,
    pub distance_range: (f64, f64),
    pub intrinsics: IntrinsicsJson,
    pub rng_seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            target_count: 4,
            occluder_count: 10,
            camera_count: 100,
            placement_bounds: Aabb {
                min: [-0.35, -0.35, 0.0],
                max: [0.35, 0.35, 0.2],
            },
            drop_to_plane: true,
            eccentric_noise_sigma: 0.05,
            roll_noise_sigma: 15f64.to_radians(),
            distance_range: (0.5, 1.5),
            intrinsics: IntrinsicsJson {
                fx: 572.0,
                fy: 572.0,
                cx: 320.0,
                cy: 240.0,
                width: 640,
                height: 480,
            },
            rng_seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.target_count == 0 || self.camera_count == 0 {
            return bad("target and camera counts must be at least 1");
        }
        if (0..3).any(|i| !(self.placement_bounds.max[i] > self.placement_bounds.min[i])) {
            return bad("placement bounds are degenerate");
        }
        let (lo, hi) = self.distance_range;
        if !(lo > 0.0 && hi >= lo) {
            return bad("distance range must satisfy 0 < min <= max");
        }
        if !(self.eccentric_noise_sigma >= 0.0 && self.roll_noise_sigma >= 0.0) {
            return bad("noise sigmas must be non-negative");
        }
        self.intrinsics.to_intrinsics().map(|_| ())
    }

    pub fn camera(&self) -> Result<CameraIntrinsics> {
        self.intrinsics.to_intrinsics()
    }
}

/// Mesh pool. Mesh ids index `targets` first, then `occluders`.
#[derive(Clone, Debug)]
pub struct SceneMeshes {
    pub targets: Vec<TriangleMesh>,
    pub occluders: Vec<TriangleMesh>,
}

impl SceneMeshes {
    pub fn len(&self) -> usize {
        self.targets.len() + self.occluders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, id: usize) -> &TriangleMesh {
        if id < self.targets.len() {
            &self.targets[id]
        } else {
            &self.occluders[id - self.targets.len()]
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &TriangleMesh> {
        self.targets.iter().chain(&self.occluders)
    }
}

#[derive(Clone, Debug)]
pub struct PlacedObject {
    pub mesh_id: usize,
    /// World-from-object.
    pub pose: RigidTransform,
    pub is_target: bool,
    pub radius: f64,
}

#[derive(Clone, Debug)]
pub struct SceneInstance {
    pub id: usize,
    pub objects: Vec<PlacedObject>,
    /// Camera-from-world.
    pub cameras: Vec<RigidTransform>,
}

impl SceneInstance {
    /// Mean of the object origins.
    pub fn center(&self) -> Vector3<f64> {
        let sum: Vector3<f64> = self.objects.iter().map(|o| o.pose.translation()).sum();
        sum / self.objects.len().max(1) as f64
    }
}

/// Sphere overlap test used during placement.
pub fn spheres_overlap(a: (&Vector3<f64>, f64), b: (&Vector3<f64>, f64)) -> bool {
    (a.0 - b.0).norm() < a.1 + b.1 - OVERLAP_TOLERANCE * a.1.min(b.1)
}

fn pick(rng: &mut ChaCha8Rng, pool: usize, count: usize) -> Vec<usize> {
    if pool == 0 {
        return Vec::new();
    }
    if count <= pool {
        sample(rng, pool, count).into_vec()
    } else {
        (0..count).map(|_| rng.random_range(0..pool)).collect()
    }
}

/// Objects only; seeded from `cfg.rng_seed`.
pub fn place_objects(meshes: &SceneMeshes, cfg: &SceneConfig) -> Result<SceneInstance> {
    place_objects_with(meshes, cfg, &mut ChaCha8Rng::seed_from_u64(cfg.rng_seed))
}

/// Uniform positions in the bounds and uniform orientations, rejecting
/// overlapping bounding spheres. The first target mesh is always used; the
/// other target slots and the occluders are drawn from their pools.
pub fn place_objects_with(meshes: &SceneMeshes, cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Result<SceneInstance> {
    cfg.validate()?;
    if meshes.targets.is_empty() {
        return Err(Error::InvalidConfig("no target meshes".into()));
    }
    let mut ids: Vec<(usize, bool)> = vec![(0, true)];
    ids.extend((1..cfg.target_count).map(|_| (rng.random_range(0..meshes.targets.len()), true)));
    let nt = meshes.targets.len();
    ids.extend(pick(rng, meshes.occluders.len(), cfg.occluder_count).into_iter().map(|i| (nt + i, false)));

    let b = &cfg.placement_bounds;
    let mut placed: Vec<PlacedObject> = Vec::with_capacity(ids.len());
    let mut rejections = 0;
    for (mesh_id, is_target) in ids {
        let mesh = meshes.get(mesh_id);
        let radius = mesh.bounding_radius();
        loop {
            let rotation = random_rotation(rng).into_inner();
            let mut t = Vector3::from_fn(|i, _| rng.random_range(b.min[i]..=b.max[i]));
            if cfg.drop_to_plane {
                let lowest = mesh.vertices().iter().map(|v| (rotation * v).z).fold(f64::INFINITY, f64::min);
                t.z = b.min[2] - lowest;
            }
            if placed.iter().all(|o| !spheres_overlap((&t, radius), (o.pose.translation(), o.radius))) {
                placed.push(PlacedObject {
                    mesh_id,
                    pose: RigidTransform::from_rotation_unchecked(rotation, t),
                    is_target,
                    radius,
                });
                break;
            }
            rejections += 1;
            if rejections >= MAX_REJECTIONS {
                return Err(Error::PlacementFailed(rejections));
            }
        }
    }
    Ok(SceneInstance {
        id: 0,
        objects: placed,
        cameras: Vec::new(),
    })
}

/// Seeded from `cfg.rng_seed`.
pub fn sample_cameras(scene: &SceneInstance, cfg: &SceneConfig) -> Result<Vec<RigidTransform>> {
    sample_cameras_with(scene, cfg, &mut ChaCha8Rng::seed_from_u64(cfg.rng_seed))
}

/// Cameras on a shell around the objects' center (upper hemisphere, since the
/// scene stands on a ground plane), each aimed at the center plus Gaussian
/// offset and rolled about its optical axis.
pub fn sample_cameras_with(scene: &SceneInstance, cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Result<Vec<RigidTransform>> {
    cfg.validate()?;
    if scene.objects.is_empty() {
        return Err(Error::DegenerateInput("scene has no objects".into()));
    }
    let center = scene.center();
    let eccentric = Normal::new(0.0, cfg.eccentric_noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let roll = Normal::new(0.0, cfg.roll_noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let (lo, hi) = cfg.distance_range;
    let mut cameras = Vec::with_capacity(cfg.camera_count);
    for _ in 0..cfg.camera_count {
        let mut dir = random_unit(rng).into_inner();
        dir.z = dir.z.abs();
        let distance = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let eye = center + dir * distance;
        let target = center + Vector3::from_fn(|_, _| eccentric.sample(rng));
        let base = look_at(&eye, &target, &Vector3::z());
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), roll.sample(rng)).into_inner();
        cameras.push(RigidTransform::from_rotation_unchecked(rz * base.rotation(), rz * base.translation()));
    }
    Ok(cameras)
}

/// Roll of a camera-from-world pose relative to the upright look-at frame
/// with world +z up.
pub fn camera_roll(camera_from_world: &RigidTransform) -> f64 {
    let r = camera_from_world.rotation();
    r[(0, 2)].atan2(-r[(1, 2)])
}

// ---- dataset files -----------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtEntry {
    pub obj_id: u32,
    #[serde(rename = "cam_R_m2c")]
    pub cam_r_m2c: [f64; 9],
    /// Millimeters.
    pub cam_t_m2c: [f64; 3],
}

impl GtEntry {
    pub fn from_pose(obj_id: u32, camera_from_object: &RigidTransform) -> Self {
        Self {
            obj_id,
            cam_r_m2c: camera_from_object.rotation_row_major(),
            cam_t_m2c: camera_from_object.translation_array().map(|v| v * 1000.0),
        }
    }

    /// Camera-from-object in meters.
    pub fn pose(&self) -> Result<RigidTransform> {
        RigidTransform::from_row_major(&self.cam_r_m2c, &self.cam_t_m2c.map(|v| v / 1000.0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtInfo {
    pub visib_fract: f64,
    pub px_count_all: usize,
    pub px_count_visib: usize,
    pub is_target: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraEntry {
    #[serde(rename = "cam_K")]
    pub cam_k: [f64; 9],
    /// Millimeters per stored depth unit.
    pub depth_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: usize,
    pub dir: String,
    pub seed: u64,
    pub stream: u64,
    pub images: usize,
    pub annotations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub scene_count: usize,
    /// Model files in meters, indexed by `obj_id - 1`.
    pub models: Vec<String>,
    pub target_obj_ids: Vec<u32>,
    pub scenes: Vec<SceneRecord>,
    pub config: SceneConfig,
}

pub fn scene_dir_name(scene: usize) -> String {
    format!("scene_{scene:06}")
}

pub fn depth_file(image: usize) -> String {
    format!("depth/{image:06}.png")
}

pub fn mask_file(image: usize, annotation: usize) -> String {
    format!("mask/{image:06}_{annotation:06}.png")
}

/// One scene with its cameras. Scene `i` draws from the master seed's
/// ChaCha stream `i`, independent of the other scenes.
pub fn generate_scene(meshes: &SceneMeshes, cfg: &SceneConfig, scene_id: usize) -> Result<SceneInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    rng.set_stream(scene_id as u64);
    let mut scene = place_objects_with(meshes, cfg, &mut rng)?;
    scene.id = scene_id;
    scene.cameras = sample_cameras_with(&scene, cfg, &mut rng)?;
    Ok(scene)
}

fn write_scene(meshes: &SceneMeshes, cfg: &SceneConfig, scene: &SceneInstance, dir: &Path) -> Result<SceneRecord> {
    let k = cfg.camera()?;
    fs::create_dir_all(dir.join("depth"))?;
    fs::create_dir_all(dir.join("mask"))?;
    let ground = TriangleMesh::quad(GROUND_SIZE, GROUND_SIZE);
    let ground_pose = RigidTransform::from_translation(Vector3::new(0.0, 0.0, cfg.placement_bounds.min[2]));
    let cam_k = [k.fx, 0.0, k.cx, 0.0, k.fy, k.cy, 0.0, 0.0, 1.0];

    let mut gt = BTreeMap::new();
    let mut info = BTreeMap::new();
    let mut cams = BTreeMap::new();
    let mut annotations = 0;
    for (image, camera_from_world) in scene.cameras.iter().enumerate() {
        let world_from_camera = camera_from_world.inverse();
        let poses: Vec<RigidTransform> = scene.objects.iter().map(|o| chain_object_pose(&world_from_camera, &o.pose)).collect();
        let mut items: Vec<(&TriangleMesh, RigidTransform)> =
            scene.objects.iter().zip(&poses).map(|(o, p)| (meshes.get(o.mesh_id), *p)).collect();
        items.push((&ground, chain_object_pose(&world_from_camera, &ground_pose)));
        let (render, footprints) = render_scene_with_footprints(&items, &k);
        save_depth_png(&render.depth, &dir.join(depth_file(image)), DEPTH_UNITS_PER_METER)?;

        let mut gt_image = Vec::new();
        let mut info_image = Vec::new();
        for (j, object) in scene.objects.iter().enumerate() {
            let all = footprints[j].count();
            if all == 0 {
                continue;
            }
            let visib = render.labels.iter().filter(|l| **l == Some(j as u32)).count();
            save_mask_png(&footprints[j], &dir.join(mask_file(image, gt_image.len())))?;
            gt_image.push(GtEntry::from_pose(object.mesh_id as u32 + 1, &poses[j]));
            info_image.push(GtInfo {
                visib_fract: visib as f64 / all as f64,
                px_count_all: all,
                px_count_visib: visib,
                is_target: object.is_target,
            });
        }
        annotations += gt_image.len();
        gt.insert(image.to_string(), gt_image);
        info.insert(image.to_string(), info_image);
        cams.insert(
            image.to_string(),
            CameraEntry {
                cam_k,
                depth_scale: 1000.0 / DEPTH_UNITS_PER_METER,
            },
        );
    }
    write_json(&gt, &dir.join("scene_gt.json"))?;
    write_json(&info, &dir.join("scene_gt_info.json"))?;
    write_json(&cams, &dir.join("scene_camera.json"))?;
    Ok(SceneRecord {
        scene_id: scene.id,
        dir: dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        seed: cfg.rng_seed,
        stream: scene.id as u64,
        images: scene.cameras.len(),
        annotations,
    })
}

/// Writes `scene_count` scenes, the meshes under `models/` and `dataset.json`.
pub fn generate_dataset(meshes: &SceneMeshes, cfg: &SceneConfig, scene_count: usize, out: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    fs::create_dir_all(out.join("models"))?;
    let mut models = Vec::new();
    for (i, mesh) in meshes.all().enumerate() {
        let name = format!("models/obj_{:06}.ply", i + 1);
        save_mesh(mesh, &out.join(&name))?;
        models.push(name);
    }
    let scenes = (0..scene_count)
        .into_par_iter()
        .map(|i| {
            let scene = generate_scene(meshes, cfg, i)?;
            write_scene(meshes, cfg, &scene, &out.join(scene_dir_name(i)))
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        seed: cfg.rng_seed,
        scene_count,
        models,
        target_obj_ids: (1..=meshes.targets.len() as u32).collect(),
        scenes,
        config: cfg.clone(),
    };
    write_json(&manifest, &out.join("dataset.json"))?;
    Ok(manifest)
}

/// One stored annotation, pose in meters.
#[derive(Clone, Debug)]
pub struct Annotation {
    pub scene_id: usize,
    pub image_id: usize,
    pub index: usize,
    pub obj_id: u32,
    pub pose: RigidTransform,
    pub visib_fract: f64,
    pub is_target: bool,
    pub mask_path: PathBuf,
    pub depth_path: PathBuf,
}

pub fn load_manifest(dataset: &Path) -> Result<DatasetManifest> {
    read_json(&dataset.join("dataset.json"))
}

pub fn load_annotations(dataset: &Path) -> Result<Vec<Annotation>> {
    let manifest = load_manifest(dataset)?;
    let mut out = Vec::new();
    for scene in &manifest.scenes {
        let dir = dataset.join(&scene.dir);
        let gt: BTreeMap<String, Vec<GtEntry>> = read_json(&dir.join("scene_gt.json"))?;
        let info: BTreeMap<String, Vec<GtInfo>> = read_json(&dir.join("scene_gt_info.json"))?;
        let mut images: Vec<(usize, &Vec<GtEntry>)> = gt
            .iter()
            .map(|(k, v)| k.parse().map(|i| (i, v)).map_err(|_| Error::Format(format!("image id {k:?}"))))
            .collect::<Result<_>>()?;
        images.sort_by_key(|(i, _)| *i);
        for (image, entries) in images {
            let infos = info
                .get(&image.to_string())
                .filter(|v| v.len() == entries.len())
                .ok_or_else(|| Error::Format(format!("scene_gt_info does not match image {image}")))?;
            for (index, (e, inf)) in entries.iter().zip(infos).enumerate() {
                out.push(Annotation {
                    scene_id: scene.scene_id,
                    image_id: image,
                    index,
                    obj_id: e.obj_id,
                    pose: e.pose()?,
                    visib_fract: inf.visib_fract,
                    is_target: inf.is_target,
                    mask_path: dir.join(mask_file(image, index)),
                    depth_path: dir.join(depth_file(image)),
                });
            }
        }
    }
    Ok(out)
}

// ---- statistics --------------------------------------------------------------

/// Fixed-edge histogram; values outside the range go to the end bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        Self {
            lo,
            hi,
            counts: vec![0; bins],
        }
    }

    pub fn bin(&self, v: f64) -> usize {
        let n = self.counts.len();
        let f = ((v - self.lo) / (self.hi - self.lo) * n as f64).floor();
        if f.is_nan() || f < 0.0 {
            0
        } else {
            (f as usize).min(n - 1)
        }
    }

    pub fn add(&mut self, v: f64) {
        let b = self.bin(v);
        self.counts[b] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn edges(&self) -> Vec<f64> {
        let n = self.counts.len();
        (0..=n).map(|i| self.lo + (self.hi - self.lo) * i as f64 / n as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseStats {
    /// Degrees in [0, 360).
    pub azimuth: Histogram,
    /// Degrees in [-90, 90].
    pub elevation: Histogram,
    /// Meters.
    pub distance: Histogram,
    pub visibility: Histogram,
}

impl Default for PoseStats {
    fn default() -> Self {
        Self {
            azimuth: Histogram::new(0.0, 360.0, 36),
            elevation: Histogram::new(-90.0, 90.0, 18),
            distance: Histogram::new(0.0, 3.0, 20),
            visibility: Histogram::new(0.0, 1.0, 20),
        }
    }
}

/// Azimuth and elevation in degrees of the camera center seen from the
/// object frame.
pub fn view_angles(camera_from_object: &RigidTransform) -> (f64, f64) {
    let c = -(camera_from_object.rotation().transpose() * camera_from_object.translation());
    let az = c.y.atan2(c.x).to_degrees().rem_euclid(360.0);
    let el = (c.z / c.norm()).clamp(-1.0, 1.0).asin().to_degrees();
    (az, el)
}

impl PoseStats {
    pub fn add(&mut self, camera_from_object: &RigidTransform, visibility: f64) {
        let (az, el) = view_angles(camera_from_object);
        self.azimuth.add(az);
        self.elevation.add(el);
        self.distance.add(camera_from_object.translation().z);
        self.visibility.add(visibility);
    }

    pub fn count(&self) -> u64 {
        self.azimuth.total()
    }

    pub fn histograms(&self) -> [(&'static str, &Histogram); 4] {
        [
            ("azimuth (deg)", &self.azimuth),
            ("elevation (deg)", &self.elevation),
            ("distance (m)", &self.distance),
            ("visibility", &self.visibility),
        ]
    }

    /// Four bar charts side by side.
    pub fn to_svg(&self) -> String {
        let body: String = self.histograms().iter().enumerate().map(|(i, (t, h))| svg_bars(h, t, i as f64 * PANEL.0)).collect();
        svg_document(PANEL.0 * 4.0, &body)
    }
}

const PANEL: (f64, f64) = (300.0, 200.0);

impl Histogram {
    pub fn to_svg(&self, title: &str) -> String {
        svg_document(PANEL.0, &svg_bars(self, title, 0.0))
    }
}

fn svg_document(width: f64, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"11\">\n{body}</svg>\n",
        PANEL.1 + 40.0
    )
}

fn svg_bars(h: &Histogram, title: &str, left: f64) -> String {
    let (pw, ph) = PANEL;
    let x0 = left + 20.0;
    let max = h.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let bw = (pw - 40.0) / h.counts.len() as f64;
    let mut svg = String::new();
    for (i, &c) in h.counts.iter().enumerate() {
        let bh = (ph - 20.0) * c as f64 / max;
        svg += &format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#4a7fb5\"/>\n",
            x0 + i as f64 * bw,
            ph - bh,
            (bw - 1.0).max(0.5),
            bh
        );
    }
    svg += &format!("<text x=\"{x0:.1}\" y=\"{:.1}\">{title} [{}, {}], n={}</text>\n", ph + 20.0, h.lo, h.hi, h.total());
    svg
}

pub fn dataset_stats(dataset: &Path) -> Result<PoseStats> {
    let mut stats = PoseStats::default();
    for a in load_annotations(dataset)? {
        stats.add(&a.pose, a.visib_fract);
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::occluder_library;

    fn meshes() -> SceneMeshes {
        SceneMeshes {
            targets: vec![TriangleMesh::asymmetric_block().normalized().scaled(0.06)],
            occluders: occluder_library(),
        }
    }

    #[test]
    fn single_object_stays_in_bounds() {
        let cfg = SceneConfig {
            target_count: 1,
            occluder_count: 0,
            drop_to_plane: false,
            ..Default::default()
        };
        for seed in 0..50 {
            let s = place_objects(&meshes(), &SceneConfig { rng_seed: seed, ..cfg.clone() }).unwrap();
            assert_eq!(s.objects.len(), 1);
            assert!(cfg.placement_bounds.contains(s.objects[0].pose.translation()));
        }
    }

    #[test]
    fn impossible_packing_fails() {
        let unit = TriangleMesh::uv_sphere(1.0, 8, 16);
        let m = SceneMeshes {
            targets: vec![unit.clone()],
            occluders: vec![unit],
        };
        let cfg = SceneConfig {
            target_count: 4,
            occluder_count: 10,
            placement_bounds: Aabb {
                min: [0.0; 3],
                max: [0.1; 3],
            },
            drop_to_plane: false,
            ..Default::default()
        };
        assert!(matches!(place_objects(&m, &cfg), Err(Error::PlacementFailed(_))));
    }

    #[test]
    fn placement_is_deterministic_and_dropped_to_plane() {
        let cfg = SceneConfig::default();
        let a = place_objects(&meshes(), &cfg).unwrap();
        let b = place_objects(&meshes(), &cfg).unwrap();
        assert_eq!(a.objects.len(), 14);
        for (x, y) in a.objects.iter().zip(&b.objects) {
            assert_eq!(x.pose, y.pose);
            let lowest = meshes().get(x.mesh_id).transformed(&x.pose).bounding_box().0.z;
            assert!(lowest.abs() < 1e-12);
        }
        assert_eq!(a.objects.iter().filter(|o| o.is_target).count(), 4);
    }

    #[test]
    fn noiseless_cameras_look_at_center() {
        let cfg = SceneConfig {
            eccentric_noise_sigma: 0.0,
            roll_noise_sigma: 0.0,
            ..Default::default()
        };
        let scene = place_objects(&meshes(), &cfg).unwrap();
        let center = scene.center();
        for cam in sample_cameras(&scene, &cfg).unwrap() {
            let c = cam.apply(&center);
            assert!(c.x.abs() < 1e-9 && c.y.abs() < 1e-9 && c.z > 0.0);
            assert!(c.z >= 0.5 - 1e-9 && c.z <= 1.5 + 1e-9);
            assert!(camera_roll(&cam).abs() < 1e-9);
        }
    }

    #[test]
    fn view_angles_by_hand() {
        // Camera on the object's +y axis, 1 m away, 30° above the xy plane.
        let eye = Vector3::new(0.0, 30f64.to_radians().cos(), 30f64.to_radians().sin());
        let cam = look_at(&eye, &Vector3::zeros(), &Vector3::z());
        let (az, el) = view_angles(&cam);
        assert!((az - 90.0).abs() < 1e-9 && (el - 30.0).abs() < 1e-9);
        let mut stats = PoseStats::default();
        stats.add(&cam, 0.5);
        assert_eq!(stats.azimuth.counts[9], 1);
        assert_eq!(stats.elevation.counts[12], 1);
        assert_eq!(stats.distance.counts[6], 1);
        assert_eq!(stats.visibility.counts[10], 1);
    }

    #[test]
    fn histogram_end_bins_absorb_out_of_range() {
        let mut h = Histogram::new(0.0, 1.0, 4);
        for v in [-1.0, 0.0, 0.25, 0.999, 1.0, 7.0] {
            h.add(v);
        }
        assert_eq!(h.counts, vec![2, 1, 0, 3]);
        assert_eq!(h.edges().len(), 5);
    }
}
