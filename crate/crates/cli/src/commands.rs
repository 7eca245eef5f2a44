use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use metric_align::align::{coarse_align, estimate_query_pose, fine_align, CoarseConfig, FineConfig, IcpRefiner, QueryConfig, TraceRecord};
use metric_align::geom::relative_pose;
use metric_align::io::{
    load_depth_png, load_mesh, load_observation, load_templates, read_json, save_mesh, save_templates, write_json, IntrinsicsJson,
    PoseJson, ScaledPoseJson, DEPTH_UNITS_PER_METER,
};
use metric_align::matching::{DepthPatchMatcher, Matcher, OracleMatcher};
use metric_align::mesh::{occluder_library, MeshFrame, TriangleMesh};
use metric_align::metrics::{evaluate, report, save_report, Evaluated, MetricReport, ObjectModel, SymmetrySet};
use metric_align::raster::{octahedral_viewpoints, render_templates, sample_viewpoints, template_distance, DepthMap};
use metric_align::scenegen::{dataset_stats, generate_dataset, load_annotations, load_manifest, Annotation, SceneConfig, SceneMeshes};
use metric_align::{Error, RigidTransform, ScaledModelPose};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{AlignArgs, EvalArgs, GenArgs, MatcherKind, PoseArgs, RelposeArgs, StatsArgs, TemplatesArgs};

type Result<T> = metric_align::Result<T>;

/// BOP skips annotations with less visible surface than this.
const MIN_VISIBILITY: f64 = 0.1;

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => read_json(p),
        None => Ok(T::default()),
    }
}

fn required(p: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    p.clone().ok_or_else(|| Error::InvalidConfig(format!("missing {what} (flag or config)")))
}

fn echo<T: Serialize>(cfg: &T, out: &Path, command: &str) -> Result<()> {
    fs::create_dir_all(out)?;
    write_json(cfg, &out.join(format!("{command}.config.json")))
}

fn default_intrinsics() -> IntrinsicsJson {
    SceneConfig::default().intrinsics
}

// ---- templates -----------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplatesConfig {
    pub mesh: Option<PathBuf>,
    pub intrinsics: IntrinsicsJson,
    pub views: usize,
    pub octahedral: bool,
    /// Fraction of the shorter image side covered by the bounding sphere.
    pub fill: f64,
    pub normalize: bool,
}

impl Default for TemplatesConfig {
    fn default() -> Self {
        Self {
            mesh: None,
            intrinsics: default_intrinsics(),
            views: 42,
            octahedral: false,
            fill: 0.6,
            normalize: true,
        }
    }
}

fn load_model(path: &Path, normalize: bool) -> Result<TriangleMesh> {
    let mesh = load_mesh(path, MeshFrame::Normalized)?;
    Ok(if normalize { mesh.normalized() } else { mesh })
}

pub fn templates(args: TemplatesArgs) -> Result<()> {
    let mut cfg: TemplatesConfig = load_config(args.config.as_deref())?;
    if args.mesh.is_some() {
        cfg.mesh = args.mesh;
    }
    if let Some(p) = &args.intrinsics {
        cfg.intrinsics = read_json(p)?;
    }
    if let Some(n) = args.views {
        cfg.views = n;
    }
    cfg.octahedral |= args.octahedral;
    cfg.normalize &= !args.no_normalize;

    let mesh = load_model(&required(&cfg.mesh, "mesh")?, cfg.normalize)?;
    let k = cfg.intrinsics.to_intrinsics()?;
    let radius = template_distance(mesh.bounding_radius(), &k, cfg.fill);
    let views = if cfg.octahedral { octahedral_viewpoints(radius) } else { sample_viewpoints(cfg.views, radius)? };
    let rendered = render_templates(&mesh, &k, &views)?;
    echo(&cfg, &args.out, "templates")?;
    save_templates(&rendered, mesh.bounding_radius(), &args.out)
}

// ---- align ---------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignConfig {
    pub mesh: Option<PathBuf>,
    pub anchor: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub matcher: MatcherKind,
    pub gt: Option<PathBuf>,
    pub normalize: bool,
    pub coarse: CoarseConfig,
    pub fine: FineConfig,
    pub refiner: IcpRefiner,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            mesh: None,
            anchor: None,
            templates: None,
            matcher: MatcherKind::default(),
            gt: None,
            normalize: true,
            coarse: CoarseConfig::default(),
            fine: FineConfig::default(),
            refiner: IcpRefiner::default(),
        }
    }
}

#[derive(Serialize)]
struct AlignmentJson {
    pose: ScaledPoseJson,
    coarse_pose: ScaledPoseJson,
    cumulative_scale: f64,
    coarse_scale: f64,
    selected_view: usize,
    iterations: usize,
    converged: bool,
    trace: Vec<TraceRecord>,
}

fn matcher_for(kind: MatcherKind, oracle_pose: impl FnOnce() -> Result<ScaledModelPose>) -> Result<Box<dyn Matcher>> {
    Ok(match kind {
        MatcherKind::Oracle => Box::new(OracleMatcher {
            gt_obs_pose: oracle_pose()?,
        }),
        MatcherKind::DepthPatch => Box::new(DepthPatchMatcher::default()),
    })
}

fn read_scaled_pose(path: &Path) -> Result<ScaledModelPose> {
    read_json::<ScaledPoseJson>(path)?.to_pose()
}

pub fn align(args: AlignArgs) -> Result<()> {
    let mut cfg: AlignConfig = load_config(args.config.as_deref())?;
    for (slot, flag) in [(&mut cfg.mesh, args.mesh), (&mut cfg.anchor, args.anchor), (&mut cfg.templates, args.templates), (&mut cfg.gt, args.gt)] {
        if flag.is_some() {
            *slot = flag;
        }
    }
    if let Some(m) = args.matcher {
        cfg.matcher = m;
    }
    if let Some(s) = args.seed {
        cfg.coarse.matcher.rng_seed = s;
        cfg.coarse.pnp.seed = s;
        cfg.fine.matcher.rng_seed = s;
    }
    cfg.fine.rescale &= !args.no_rescale;
    let anchor = required(&cfg.anchor, "anchor")?;
    if cfg.gt.is_none() && cfg.matcher == MatcherKind::Oracle {
        cfg.gt = Some(anchor.join("gt.json"));
    }

    let mesh = load_model(&required(&cfg.mesh, "mesh")?, cfg.normalize)?;
    let obs = load_observation(&anchor)?;
    let (templates, _) = load_templates(&required(&cfg.templates, "templates")?)?;
    let matcher = matcher_for(cfg.matcher, || read_scaled_pose(cfg.gt.as_deref().expect("set above")))?;
    echo(&cfg, &args.out, "align")?;

    let coarse = coarse_align(&obs, &templates, matcher.as_ref(), &cfg.coarse)?;
    let result = fine_align(&mesh, &obs, &coarse, &cfg.refiner, matcher.as_ref(), &templates, &cfg.fine)?;
    write_json(
        &AlignmentJson {
            pose: ScaledPoseJson::from(&result.pose),
            coarse_pose: ScaledPoseJson::from(&coarse.pose),
            cumulative_scale: result.cumulative_scale,
            coarse_scale: result.coarse_scale,
            selected_view: coarse.selected_view,
            iterations: result.iterations,
            converged: result.converged,
            trace: result.trace_records(),
        },
        &args.out.join("alignment.json"),
    )?;
    write_json(&ScaledPoseJson::from(&result.pose), &args.out.join("pose.json"))?;
    save_mesh(&mesh.scaled(result.pose.scale()), &args.out.join("model_metric.obj"))?;
    Ok(())
}

// ---- pose ----------------------------------------------------------------------

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseConfig {
    pub mesh: Option<PathBuf>,
    pub query: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub matcher: MatcherKind,
    pub gt: Option<PathBuf>,
    pub estimation: QueryConfig,
    pub refiner: IcpRefiner,
}

#[derive(Serialize)]
struct CandidateJson {
    score: f64,
    pose: PoseJson,
}

pub fn pose(args: PoseArgs) -> Result<()> {
    let mut cfg: PoseConfig = load_config(args.config.as_deref())?;
    for (slot, flag) in [(&mut cfg.mesh, args.mesh), (&mut cfg.query, args.query), (&mut cfg.templates, args.templates), (&mut cfg.gt, args.gt)] {
        if flag.is_some() {
            *slot = flag;
        }
    }
    if let Some(m) = args.matcher {
        cfg.matcher = m;
    }
    if let Some(s) = args.seed {
        cfg.estimation.coarse.matcher.rng_seed = s;
        cfg.estimation.coarse.pnp.seed = s;
    }
    let query = required(&cfg.query, "query")?;
    if cfg.gt.is_none() && cfg.matcher == MatcherKind::Oracle {
        cfg.gt = Some(query.join("gt.json"));
    }

    let metric = load_mesh(&required(&cfg.mesh, "mesh")?, MeshFrame::Metric)?;
    let obs = load_observation(&query)?;
    let (templates, index) = load_templates(&required(&cfg.templates, "templates")?)?;
    // Bundles rendered from the unit-radius mesh are brought to metric size.
    let factor = metric.bounding_radius() / index.model_radius;
    let templates: Vec<_> = templates.iter().map(|t| t.rescaled(factor)).collect();
    // The oracle's sidecar poses the unit-radius mesh; the metric mesh is
    // that mesh times its bounding radius.
    let matcher = matcher_for(cfg.matcher, || {
        let gt = read_scaled_pose(cfg.gt.as_deref().expect("set above"))?;
        ScaledModelPose::new(gt.scale() / metric.bounding_radius(), gt.pose)
    })?;
    echo(&cfg, &args.out, "pose")?;

    let est = estimate_query_pose(&metric, &obs, &templates, matcher.as_ref(), &cfg.refiner, &cfg.estimation)?;
    write_json(&PoseJson::from(&est.pose), &args.out.join("pose.json"))?;
    let candidates: Vec<CandidateJson> = est
        .candidates
        .iter()
        .map(|c| CandidateJson {
            score: c.score,
            pose: PoseJson::from(&c.hypothesis),
        })
        .collect();
    write_json(&candidates, &args.out.join("candidates.json"))
}

// ---- relpose -------------------------------------------------------------------

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RelposeConfig {
    pub anchor: Option<PathBuf>,
    pub query: Option<PathBuf>,
}

/// Accepts a bare `{R, t}` object (scaled poses included) or a document with
/// a `pose` field holding one.
pub fn read_rigid_pose(path: &Path) -> Result<RigidTransform> {
    let mut v: serde_json::Value = read_json(path)?;
    if let Some(inner) = v.get_mut("pose") {
        v = inner.take();
    }
    serde_json::from_value::<PoseJson>(v)?.to_pose()
}

pub fn relpose(args: RelposeArgs) -> Result<()> {
    let mut cfg: RelposeConfig = load_config(args.config.as_deref())?;
    if args.anchor.is_some() {
        cfg.anchor = args.anchor;
    }
    if args.query.is_some() {
        cfg.query = args.query;
    }
    let anchor = read_rigid_pose(&required(&cfg.anchor, "anchor")?)?;
    let query = read_rigid_pose(&required(&cfg.query, "query")?)?;
    echo(&cfg, &args.out, "relpose")?;
    // Estimates are camera-from-object; the composition takes camera poses in
    // the object frame.
    let rel = relative_pose(&anchor.inverse(), &query.inverse());
    write_json(&PoseJson::from(&rel), &args.out.join("relpose.json"))
}

// ---- gen / stats ---------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub scenes: usize,
    pub scene: SceneConfig,
    /// Metric target mesh; the built-in block when absent.
    pub target_mesh: Option<PathBuf>,
    /// Bounding radius the target is rescaled to; kept as loaded when absent.
    pub target_radius: Option<f64>,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            scenes: 1,
            scene: SceneConfig::default(),
            target_mesh: None,
            target_radius: Some(0.06),
        }
    }
}

pub fn gen(args: GenArgs) -> Result<()> {
    let mut cfg: GenConfig = load_config(args.config.as_deref())?;
    if let Some(n) = args.scenes {
        cfg.scenes = n;
    }
    if let Some(n) = args.cameras {
        cfg.scene.camera_count = n;
    }
    if let Some(s) = args.seed {
        cfg.scene.rng_seed = s;
    }
    if args.target_mesh.is_some() {
        cfg.target_mesh = args.target_mesh;
    }
    let target = match &cfg.target_mesh {
        Some(p) => load_mesh(p, MeshFrame::Metric)?,
        None => TriangleMesh::asymmetric_block(),
    };
    let target = match cfg.target_radius {
        Some(r) => target.normalized().scaled(r),
        None => target,
    };
    let meshes = SceneMeshes {
        targets: vec![target],
        occluders: occluder_library(),
    };
    echo(&cfg, &args.out, "gen")?;
    generate_dataset(&meshes, &cfg.scene, cfg.scenes, &args.out)?;
    Ok(())
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct StatsConfig {
    pub dataset: Option<PathBuf>,
}

pub fn stats(args: StatsArgs) -> Result<()> {
    let mut cfg: StatsConfig = load_config(args.config.as_deref())?;
    if args.dataset.is_some() {
        cfg.dataset = args.dataset;
    }
    let stats = dataset_stats(&required(&cfg.dataset, "dataset")?)?;
    echo(&cfg, &args.out, "stats")?;
    write_json(&stats, &args.out.join("stats.json"))?;
    fs::write(args.out.join("stats.svg"), stats.to_svg())?;
    for (name, (title, h)) in ["azimuth", "elevation", "distance", "visibility"].iter().zip(stats.histograms()) {
        fs::write(args.out.join(format!("{name}.svg")), h.to_svg(title))?;
    }
    Ok(())
}

// ---- eval ----------------------------------------------------------------------

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub dataset: Option<PathBuf>,
    pub estimates: Option<PathBuf>,
}

/// One estimates CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub scene: usize,
    pub image: usize,
    pub obj: u32,
    pub pose: RigidTransform,
}

/// Parses estimate rows. A first line whose first field is not an integer is
/// taken as a header.
pub fn read_estimates(path: &Path) -> Result<Vec<Estimate>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Format(format!("{other:?}")),
        })?;
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(e.to_string()))?;
        if line == 0 && record.get(0).is_some_and(|f| f.parse::<usize>().is_err()) {
            continue;
        }
        let bad = |what: &str| Error::Format(format!("estimates line {}: {what}", line + 1));
        if record.len() != 15 {
            return Err(bad(&format!("expected 15 fields, found {}", record.len())));
        }
        let int = |i: usize| record[i].parse::<usize>().map_err(|_| bad("scene, image and obj must be integers"));
        let mut v = [0.0; 12];
        for (j, slot) in v.iter_mut().enumerate() {
            *slot = record[3 + j].parse::<f64>().map_err(|_| bad("pose values must be numbers"))?;
        }
        let r: [f64; 9] = v[..9].try_into().expect("nine values");
        let t: [f64; 3] = v[9..].try_into().expect("three values");
        let pose = RigidTransform::from_row_major(&r, &t).map_err(|e| bad(&e.to_string()))?;
        out.push(Estimate {
            scene: int(0)?,
            image: int(1)?,
            obj: int(2)? as u32,
            pose,
        });
    }
    Ok(out)
}

/// Pairs each estimate with the closest unused ground-truth instance of the
/// same object in the same image.
fn assign<'a>(estimates: &[Estimate], annotations: &'a [Annotation]) -> Vec<Option<&'a Annotation>> {
    let mut by_key: HashMap<(usize, usize, u32), Vec<&Annotation>> = HashMap::new();
    for a in annotations {
        by_key.entry((a.scene_id, a.image_id, a.obj_id)).or_default().push(a);
    }
    estimates
        .iter()
        .map(|e| {
            let pool = by_key.get_mut(&(e.scene, e.image, e.obj))?;
            let (i, _) = pool
                .iter()
                .enumerate()
                .map(|(i, a)| (i, (a.pose.translation() - e.pose.translation()).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1))?;
            Some(pool.swap_remove(i))
        })
        .collect()
}

pub fn evaluate_estimates(dataset: &Path, estimates: &[Estimate]) -> Result<Vec<MetricReport>> {
    let manifest = load_manifest(dataset)?;
    let k = manifest.config.camera()?;
    let diag = ((k.width as f64).powi(2) + (k.height as f64).powi(2)).sqrt();
    let annotations = load_annotations(dataset)?;
    let assigned = assign(estimates, &annotations);

    let mut models: BTreeMap<u32, ObjectModel> = BTreeMap::new();
    for e in estimates {
        if !models.contains_key(&e.obj) {
            let file = manifest
                .models
                .get(e.obj as usize - 1)
                .ok_or_else(|| Error::Format(format!("unknown obj id {}", e.obj)))?;
            let mesh = load_mesh(&dataset.join(file), MeshFrame::Metric)?;
            models.insert(e.obj, ObjectModel::new(mesh, SymmetrySet::identity())?);
        }
    }
    let jobs: Vec<(&Estimate, &Annotation)> = estimates
        .iter()
        .zip(&assigned)
        .filter_map(|(e, a)| match a {
            Some(a) if a.visib_fract >= MIN_VISIBILITY => Some((e, *a)),
            Some(_) => None,
            None => {
                eprintln!("warning: no ground truth for scene {} image {} obj {}", e.scene, e.image, e.obj);
                None
            }
        })
        .collect();
    let mut depths: HashMap<PathBuf, DepthMap> = HashMap::new();
    for (_, a) in &jobs {
        if !depths.contains_key(&a.depth_path) {
            depths.insert(a.depth_path.clone(), load_depth_png(&a.depth_path, DEPTH_UNITS_PER_METER)?);
        }
    }
    let rows: Vec<Evaluated> = jobs
        .par_iter()
        .map(|(e, a)| {
            let ids = (e.scene as u32, e.image as u32, e.obj);
            evaluate(&models[&e.obj], ids, &k, &a.pose, &e.pose, &depths[&a.depth_path])
        })
        .collect::<Result<_>>()?;

    let mut out = Vec::new();
    for (obj, model) in &models {
        let group: Vec<Evaluated> = rows.iter().filter(|r| r.obj == *obj).cloned().collect();
        if group.is_empty() {
            continue;
        }
        let mut rep = report(&group, model.diameter, diag);
        if let Some(summary) = rep.last_mut() {
            summary.obj = Some(*obj);
        }
        out.extend(rep);
    }
    Ok(out)
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let mut cfg: EvalConfig = load_config(args.config.as_deref())?;
    if args.dataset.is_some() {
        cfg.dataset = args.dataset;
    }
    if args.estimates.is_some() {
        cfg.estimates = args.estimates;
    }
    let estimates = read_estimates(&required(&cfg.estimates, "estimates")?)?;
    let rows = evaluate_estimates(&required(&cfg.dataset, "dataset")?, &estimates)?;
    echo(&cfg, &args.out, "eval")?;
    save_report(&rows, &args.out.join("report.csv"))
}
