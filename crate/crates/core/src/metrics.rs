//! Pose-error metrics: ADD / ADD-S, the BOP errors (VSD, MSSD, MSPD) with
//! their average recall, Chamfer distance and object diameter.
//!
//! Point metrics are generic over the scalar; anything that renders is f64.

use std::io::Write;
use std::path::Path;

use nalgebra::{Rotation3, Unit, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Pinhole, Rigid3};
use crate::mesh::TriangleMesh;
use crate::raster::{rasterize, DepthMap};
use crate::spatial::KdTree;
use crate::{CameraIntrinsics, Real, RigidTransform};

/// Occlusion tolerance used for VSD visibility masks (meters).
pub const VSD_DELTA: f64 = 0.015;
/// Model points used for ADD-type metrics are resampled above this vertex
/// count.
pub const MAX_MODEL_VERTICES: usize = 10_000;
pub const RESAMPLED_POINTS: usize = 2048;
/// Steps used to discretize a continuous symmetry.
pub const CONTINUOUS_STEPS: usize = 64;

/// Object symmetries; always contains the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetrySet<T: Real = f64> {
    transforms: Vec<Rigid3<T>>,
}

impl<T: Real> Default for SymmetrySet<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> SymmetrySet<T> {
    pub fn identity() -> Self {
        Self {
            transforms: vec![Rigid3::identity()],
        }
    }

    /// Validates each transform and adds the identity if it is missing.
    pub fn new(transforms: Vec<Rigid3<T>>) -> Result<Self> {
        let mut out = Vec::with_capacity(transforms.len() + 1);
        for t in transforms {
            out.push(Rigid3::new(*t.rotation(), *t.translation())?);
        }
        let tol = T::lit(1e-9);
        if !out
            .iter()
            .any(|t| (t.rotation() - nalgebra::Matrix3::identity()).norm() < tol && t.translation().norm() < tol)
        {
            out.insert(0, Rigid3::identity());
        }
        Ok(Self { transforms: out })
    }

    /// `n`-fold rotational symmetry about `axis` through the model origin.
    pub fn discrete(axis: &Vector3<T>, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("symmetry order must be positive".into()));
        }
        let axis = Unit::try_new(*axis, T::default_epsilon())
            .ok_or_else(|| Error::InvalidConfig("symmetry axis is zero".into()))?;
        let step = T::two_pi() / T::from_usize(n).unwrap();
        let transforms = (0..n)
            .map(|i| {
                let r = Rotation3::from_axis_angle(&axis, step * T::from_usize(i).unwrap());
                Rigid3::from_rotation_unchecked(r.into_inner(), Vector3::zeros())
            })
            .collect();
        Ok(Self { transforms })
    }

    /// Continuous rotational symmetry, discretized at [`CONTINUOUS_STEPS`].
    pub fn continuous(axis: &Vector3<T>) -> Result<Self> {
        Self::discrete(axis, CONTINUOUS_STEPS)
    }

    pub fn transforms(&self) -> &[Rigid3<T>] {
        &self.transforms
    }

    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }
}

fn non_empty<T>(points: &[T]) -> Result<()> {
    if points.is_empty() {
        Err(Error::EmptyModel)
    } else {
        Ok(())
    }
}

fn mean<T: Real>(values: impl Iterator<Item = T>, n: usize) -> T {
    values.fold(T::zero(), |a, b| a + b) / T::from_usize(n).unwrap()
}

/// Vertices, or uniform surface samples for large meshes.
pub fn model_points(mesh: &TriangleMesh, seed: u64) -> Vec<Vector3<f64>> {
    if mesh.vertices().len() > MAX_MODEL_VERTICES {
        mesh.sample_surface(RESAMPLED_POINTS, seed)
    } else {
        mesh.vertices().to_vec()
    }
}

/// Mean distance between corresponding model points under the two poses.
pub fn add<T: Real>(points: &[Vector3<T>], gt: &Rigid3<T>, est: &Rigid3<T>) -> Result<T> {
    non_empty(points)?;
    Ok(mean(points.iter().map(|x| (est.apply(x) - gt.apply(x)).norm()), points.len()))
}

/// Mean distance from each ground-truth-posed point to the nearest
/// estimate-posed point.
pub fn adds<T: Real>(points: &[Vector3<T>], gt: &Rigid3<T>, est: &Rigid3<T>) -> Result<T> {
    non_empty(points)?;
    let posed: Vec<_> = points.iter().map(|x| est.apply(x)).collect();
    let tree = KdTree::new(&posed);
    let d: Vec<T> = points
        .par_iter()
        .map(|x| tree.nearest_distance_squared(&gt.apply(x)).sqrt())
        .collect();
    Ok(mean(d.into_iter(), points.len()))
}

/// Fraction of `errors` strictly below `threshold`.
pub fn recall_below(errors: &[f64], threshold: f64) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    errors.iter().filter(|e| **e < threshold).count() as f64 / errors.len() as f64
}

/// Area under the recall-vs-threshold curve on `[0, max_threshold]`,
/// normalized to `[0, 1]`. The curve is a step function, so the integral is
/// `mean(max_threshold − min(e, max_threshold)) / max_threshold`.
pub fn auc(errors: &[f64], max_threshold: f64) -> f64 {
    if errors.is_empty() || !(max_threshold > 0.0) {
        return 0.0;
    }
    errors.iter().map(|e| max_threshold - e.clamp(0.0, max_threshold)).sum::<f64>() / (errors.len() as f64 * max_threshold)
}

fn add_errors(points: &[Vector3<f64>], pairs: &[(RigidTransform, RigidTransform)], symmetric: bool) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|(gt, est)| if symmetric { adds(points, gt, est) } else { add(points, gt, est) })
        .collect()
}

/// Recall at `factor · diameter` (0.1 by convention).
pub fn add_recall(
    points: &[Vector3<f64>],
    diameter: f64,
    pairs: &[(RigidTransform, RigidTransform)],
    factor: f64,
    symmetric: bool,
) -> Result<f64> {
    Ok(recall_below(&add_errors(points, pairs, symmetric)?, factor * diameter))
}

/// AUC of ADD (or ADD-S) up to `max_threshold` meters (0.1 by convention).
pub fn add_auc(points: &[Vector3<f64>], pairs: &[(RigidTransform, RigidTransform)], max_threshold: f64, symmetric: bool) -> Result<f64> {
    Ok(auc(&add_errors(points, pairs, symmetric)?, max_threshold))
}

/// Render-based visibility: rendered pixels not hidden behind the observed
/// surface by more than `delta`. Pixels without observed depth count as
/// visible.
fn visibility(render: &DepthMap, obs: &DepthMap, delta: f64) -> Vec<bool> {
    render
        .data()
        .iter()
        .zip(obs.data())
        .map(|(&r, &o)| r > 0.0 && (o <= 0.0 || r - o <= delta))
        .collect()
}

/// Visible surface discrepancy for misalignment tolerance `tau`.
pub fn vsd(
    mesh_metric: &TriangleMesh,
    k: &CameraIntrinsics,
    gt: &RigidTransform,
    est: &RigidTransform,
    obs_depth: &DepthMap,
    tau: f64,
    delta: f64,
) -> Result<f64> {
    Ok(vsd_multi(mesh_metric, k, gt, est, obs_depth, &[tau], delta)?[0])
}

/// [`vsd`] for several tolerances sharing the same two renders.
pub fn vsd_multi(
    mesh_metric: &TriangleMesh,
    k: &CameraIntrinsics,
    gt: &RigidTransform,
    est: &RigidTransform,
    obs_depth: &DepthMap,
    taus: &[f64],
    delta: f64,
) -> Result<Vec<f64>> {
    let (d_gt, _) = rasterize(mesh_metric, k, gt)?;
    let (d_est, _) = rasterize(mesh_metric, k, est)?;
    let v_gt = visibility(&d_gt, obs_depth, delta);
    let mut v_est = visibility(&d_est, obs_depth, delta);
    // Where the ground truth is visible, the estimate is judged against it
    // rather than against the observation.
    for ((v, g), d) in v_est.iter_mut().zip(&v_gt).zip(d_est.data()) {
        *v |= *g && *d > 0.0;
    }
    let union = v_gt.iter().zip(&v_est).filter(|(a, b)| **a || **b).count();
    if union == 0 {
        return Ok(vec![1.0; taus.len()]);
    }
    let both: Vec<f64> = (0..v_gt.len())
        .filter(|&i| v_gt[i] && v_est[i])
        .map(|i| (d_gt.data()[i] - d_est.data()[i]).abs())
        .collect();
    Ok(taus
        .iter()
        .map(|tau| 1.0 - both.iter().filter(|d| **d < *tau).count() as f64 / union as f64)
        .collect())
}

/// Maximum symmetry-aware surface distance.
pub fn mssd<T: Real>(points: &[Vector3<T>], symmetries: &SymmetrySet<T>, gt: &Rigid3<T>, est: &Rigid3<T>) -> Result<T> {
    non_empty(points)?;
    non_empty(symmetries.transforms())?;
    let posed: Vec<_> = points.iter().map(|x| est.apply(x)).collect();
    Ok(min_over(symmetries, |s| {
        let g = gt.compose(s);
        points.iter().zip(&posed).map(|(x, e)| (e - g.apply(x)).norm()).fold(T::zero(), |a, b| a.max(b))
    }))
}

/// Maximum symmetry-aware projection distance, in pixels.
pub fn mspd<T: Real>(
    points: &[Vector3<T>],
    symmetries: &SymmetrySet<T>,
    k: &Pinhole<T>,
    gt: &Rigid3<T>,
    est: &Rigid3<T>,
) -> Result<T> {
    non_empty(points)?;
    non_empty(symmetries.transforms())?;
    let project = |p: Vector3<T>| k.project(&p).map_err(|_| Error::BehindCamera);
    let posed = points.iter().map(|x| project(est.apply(x))).collect::<Result<Vec<_>>>()?;
    let mut best = None::<T>;
    for s in symmetries.transforms() {
        let g = gt.compose(s);
        let mut worst = T::zero();
        for (x, e) in points.iter().zip(&posed) {
            worst = worst.max((e - project(g.apply(x))?).norm());
        }
        best = Some(best.map_or(worst, |b| b.min(worst)));
    }
    Ok(best.expect("symmetry set is non-empty"))
}

fn min_over<T: Real>(symmetries: &SymmetrySet<T>, f: impl Fn(&Rigid3<T>) -> T) -> T {
    symmetries
        .transforms()
        .iter()
        .map(f)
        .fold(None::<T>, |acc, v| Some(acc.map_or(v, |a| a.min(v))))
        .expect("symmetry set is non-empty")
}

/// ½ (mean nearest distance a→b + mean nearest distance b→a).
pub fn chamfer<T: Real>(a: &[Vector3<T>], b: &[Vector3<T>]) -> Result<T> {
    non_empty(a)?;
    non_empty(b)?;
    let one_way = |from: &[Vector3<T>], to: &[Vector3<T>]| {
        let tree = KdTree::new(to);
        let d: Vec<T> = from.par_iter().map(|p| tree.nearest_distance_squared(p).sqrt()).collect();
        mean(d.into_iter(), from.len())
    };
    Ok((one_way(a, b) + one_way(b, a)) / T::lit(2.0))
}

/// Largest distance between two points of the set.
///
/// Exact by exhaustive search. Above 5000 points the search runs over the
/// points extreme along a set of directions first, which bounds the answer
/// from below, then prunes every point that cannot beat it.
pub fn diameter<T: Real>(points: &[Vector3<T>]) -> Result<T> {
    if points.len() < 2 {
        return Err(Error::EmptyModel);
    }
    let pair_max = |cands: &[Vector3<T>]| {
        let mut best = T::zero();
        for i in 0..cands.len() {
            for j in i + 1..cands.len() {
                best = best.max((cands[i] - cands[j]).norm_squared());
            }
        }
        best
    };
    if points.len() <= 5000 {
        return Ok(pair_max(points).sqrt());
    }
    // A point farther than r from the centroid can only pair at distance
    // ≤ r + R; anything with r + R below the current bound is irrelevant.
    let c = points.iter().fold(Vector3::zeros(), |a, p| a + p) / T::from_usize(points.len()).unwrap();
    let radius: Vec<T> = points.iter().map(|p| (p - c).norm()).collect();
    let r_max = radius.iter().fold(T::zero(), |a, b| a.max(*b));
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| radius[j].partial_cmp(&radius[i]).unwrap_or(std::cmp::Ordering::Equal));
    let mut best = T::zero();
    for (n, &i) in order.iter().enumerate() {
        if radius[i] + r_max <= best {
            break;
        }
        for &j in &order[..n] {
            if radius[i] + radius[j] <= best {
                break;
            }
            best = best.max((points[i] - points[j]).norm());
        }
    }
    Ok(best)
}

/// VSD tolerances: 5 %, 10 %, …, 50 % of the diameter.
pub fn vsd_taus(diameter: f64) -> Vec<f64> {
    (1..=10).map(|i| 0.05 * i as f64 * diameter).collect()
}

fn grid(lo_step: f64) -> impl Iterator<Item = f64> {
    (1..=10).map(move |i| lo_step * i as f64)
}

/// Per-annotation BOP errors; `vsd` is indexed like [`vsd_taus`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseErrors {
    pub vsd: Vec<f64>,
    pub mssd: f64,
    pub mspd: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Recalls {
    pub vsd_recall: f64,
    pub mssd_recall: f64,
    pub mspd_recall: f64,
    pub ar: f64,
}

/// BOP average recall over the standard threshold grids: VSD over every
/// (τ, θ ∈ {0.05, …, 0.5}), MSSD over {0.05, …, 0.5}·diameter, MSPD over
/// {5, …, 50}·(image diagonal / 640) pixels.
pub fn bop_average_recall(errors: &[PoseErrors], diameter: f64, image_diagonal: f64) -> Recalls {
    if errors.is_empty() {
        return Recalls::default();
    }
    let n = errors.len() as f64;
    let frac = |hit: &dyn Fn(&PoseErrors) -> bool| errors.iter().filter(|e| hit(e)).count() as f64 / n;
    let mut vsd_sum = 0.0;
    let mut vsd_cells = 0usize;
    for t in 0..10 {
        for theta in grid(0.05) {
            vsd_sum += frac(&|e: &PoseErrors| e.vsd.get(t).is_some_and(|v| *v < theta));
            vsd_cells += 1;
        }
    }
    let mssd_recall = grid(0.05 * diameter).map(|th| frac(&|e: &PoseErrors| e.mssd < th)).sum::<f64>() / 10.0;
    let r = image_diagonal / 640.0;
    let mspd_recall = grid(5.0 * r).map(|th| frac(&|e: &PoseErrors| e.mspd < th)).sum::<f64>() / 10.0;
    let vsd_recall = vsd_sum / vsd_cells as f64;
    Recalls {
        vsd_recall,
        mssd_recall,
        mspd_recall,
        ar: (vsd_recall + mssd_recall + mspd_recall) / 3.0,
    }
}

/// Everything needed to score pose estimates of one object.
pub struct ObjectModel {
    pub mesh: TriangleMesh,
    pub points: Vec<Vector3<f64>>,
    pub diameter: f64,
    pub symmetries: SymmetrySet,
}

impl ObjectModel {
    pub fn new(mesh: TriangleMesh, symmetries: SymmetrySet) -> Result<Self> {
        let points = model_points(&mesh, 0);
        let diameter = diameter(&points)?;
        Ok(Self {
            mesh,
            points,
            diameter,
            symmetries,
        })
    }

    /// BOP errors of `est` against `gt` in one image. Renders that leave the
    /// image or points behind the camera score as maximal error.
    pub fn pose_errors(&self, k: &CameraIntrinsics, gt: &RigidTransform, est: &RigidTransform, obs_depth: &DepthMap) -> PoseErrors {
        let taus = vsd_taus(self.diameter);
        PoseErrors {
            vsd: vsd_multi(&self.mesh, k, gt, est, obs_depth, &taus, VSD_DELTA).unwrap_or_else(|_| vec![1.0; taus.len()]),
            mssd: mssd(&self.points, &self.symmetries, gt, est).unwrap_or(f64::INFINITY),
            mspd: mspd(&self.points, &self.symmetries, k, gt, est).unwrap_or(f64::INFINITY),
        }
    }
}

/// One CSV/JSON row. The summary row leaves the identifiers empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scene: Option<u32>,
    pub image: Option<u32>,
    pub obj: Option<u32>,
    pub add: f64,
    pub adds: f64,
    pub vsd_recall: f64,
    pub mssd_recall: f64,
    pub mspd_recall: f64,
    pub ar: f64,
    pub chamfer: f64,
}

/// A scored annotation before aggregation.
#[derive(Clone, Debug)]
pub struct Evaluated {
    pub scene: u32,
    pub image: u32,
    pub obj: u32,
    pub add: f64,
    pub adds: f64,
    pub chamfer: f64,
    pub errors: PoseErrors,
}

/// Scores one estimate. Chamfer compares the model points posed by each
/// transform.
pub fn evaluate(
    model: &ObjectModel,
    ids: (u32, u32, u32),
    k: &CameraIntrinsics,
    gt: &RigidTransform,
    est: &RigidTransform,
    obs_depth: &DepthMap,
) -> Result<Evaluated> {
    let a: Vec<_> = model.points.iter().map(|p| gt.apply(p)).collect();
    let b: Vec<_> = model.points.iter().map(|p| est.apply(p)).collect();
    Ok(Evaluated {
        scene: ids.0,
        image: ids.1,
        obj: ids.2,
        add: add(&model.points, gt, est)?,
        adds: adds(&model.points, gt, est)?,
        chamfer: chamfer(&a, &b)?,
        errors: model.pose_errors(k, gt, est, obs_depth),
    })
}

/// Per-annotation rows (recalls of the single annotation) followed by the
/// summary row over all of them.
pub fn report(rows: &[Evaluated], diameter: f64, image_diagonal: f64) -> Vec<MetricReport> {
    let mut out: Vec<MetricReport> = rows
        .iter()
        .map(|e| {
            let r = bop_average_recall(std::slice::from_ref(&e.errors), diameter, image_diagonal);
            MetricReport {
                scene: Some(e.scene),
                image: Some(e.image),
                obj: Some(e.obj),
                add: e.add,
                adds: e.adds,
                vsd_recall: r.vsd_recall,
                mssd_recall: r.mssd_recall,
                mspd_recall: r.mspd_recall,
                ar: r.ar,
                chamfer: e.chamfer,
            }
        })
        .collect();
    let errors: Vec<PoseErrors> = rows.iter().map(|e| e.errors.clone()).collect();
    let r = bop_average_recall(&errors, diameter, image_diagonal);
    let n = rows.len().max(1) as f64;
    out.push(MetricReport {
        scene: None,
        image: None,
        obj: None,
        add: rows.iter().map(|e| e.add).sum::<f64>() / n,
        adds: rows.iter().map(|e| e.adds).sum::<f64>() / n,
        vsd_recall: r.vsd_recall,
        mssd_recall: r.mssd_recall,
        mspd_recall: r.mspd_recall,
        ar: r.ar,
        chamfer: rows.iter().map(|e| e.chamfer).sum::<f64>() / n,
    });
    out
}

pub fn write_report_csv(rows: &[MetricReport], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `<stem>.csv` and `<stem>.json` side by side.
pub fn save_report(rows: &[MetricReport], csv_path: &Path) -> Result<()> {
    write_report_csv(rows, std::fs::File::create(csv_path)?)?;
    crate::io::write_json(&rows, &csv_path.with_extension("json"))
}
