//! Synthetic end-to-end fixture: a one-object, two-camera dataset plus the
//! anchor and query observations cut from it.

use std::fs;

use metric_align::geom::relative_pose;
use metric_align::io::{save_mesh, write_json, PoseJson, ScaledPoseJson};
use metric_align::mesh::TriangleMesh;
use metric_align::scenegen::{depth_file, generate_dataset, load_annotations, mask_file, scene_dir_name, Aabb, SceneConfig, SceneMeshes};
use metric_align::ScaledModelPose;
use serde::Serialize;

use crate::FixtureArgs;

/// True size of the object: bounding radius in meters.
pub const FIXTURE_SCALE: f64 = 0.07;

#[derive(Serialize)]
struct FixtureGt {
    scale: f64,
    anchor: ScaledPoseJson,
    query: ScaledPoseJson,
    /// Query camera expressed in the anchor camera frame.
    relative: PoseJson,
}

pub fn run(args: FixtureArgs) -> metric_align::Result<()> {
    let out = &args.out;
    let normalized = TriangleMesh::blob(48, 64).normalized();
    let meshes = SceneMeshes {
        targets: vec![normalized.scaled(FIXTURE_SCALE)],
        occluders: Vec::new(),
    };
    let cfg = SceneConfig {
        target_count: 1,
        occluder_count: 0,
        camera_count: 2,
        placement_bounds: Aabb {
            min: [-0.01, -0.01, 0.0],
            max: [0.01, 0.01, 0.01],
        },
        eccentric_noise_sigma: 0.01,
        distance_range: (0.6, 0.8),
        rng_seed: args.seed,
        ..Default::default()
    };
    fs::create_dir_all(out)?;
    save_mesh(&normalized, &out.join("mesh.obj"))?;
    let dataset = out.join("dataset");
    generate_dataset(&meshes, &cfg, 1, &dataset)?;
    let annotations = load_annotations(&dataset)?;
    let scene = dataset.join(scene_dir_name(0));
    let mut poses = Vec::new();
    for (image, name) in ["anchor", "query"].iter().enumerate() {
        let a = annotations
            .iter()
            .find(|a| a.image_id == image)
            .ok_or_else(|| metric_align::Error::PlacementFailed(0))?;
        let dir = out.join(name);
        fs::create_dir_all(&dir)?;
        fs::copy(scene.join(depth_file(image)), dir.join("depth.png"))?;
        fs::copy(scene.join(mask_file(image, 0)), dir.join("mask.png"))?;
        write_json(&cfg.intrinsics, &dir.join("intrinsics.json"))?;
        let pose = ScaledModelPose::new(FIXTURE_SCALE, a.pose)?;
        write_json(&ScaledPoseJson::from(&pose), &dir.join("gt.json"))?;
        poses.push(pose);
    }
    let gt = FixtureGt {
        scale: FIXTURE_SCALE,
        anchor: ScaledPoseJson::from(&poses[0]),
        query: ScaledPoseJson::from(&poses[1]),
        relative: PoseJson::from(&relative_pose(&poses[0].pose.inverse(), &poses[1].pose.inverse())),
    };
    write_json(&gt, &out.join("gt.json"))
}
