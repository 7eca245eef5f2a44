use serde::{Deserialize, Serialize};

use super::coarse::CoarseResult;
use super::query::score_hypothesis;
use super::refine::{RefineStep, Refiner};
use super::robust_scale;
use crate::error::Result;
use crate::matching::{lift_pairs, MatchSet, Matcher, MatcherConfig, MIN_MATCHES};
use crate::mesh::TriangleMesh;
use crate::raster::{render_view, Observation, TemplateView};
use crate::{RigidTransform, ScaledModelPose};
use nalgebra::Vector3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FineConfig {
    pub max_iterations: usize,
    pub rotation_tol_deg: f64,
    pub translation_tol: f64,
    pub scale_tol: f64,
    /// Re-estimate the scale each iteration; off reproduces the ablation
    /// that keeps the coarse scale.
    pub rescale: bool,
    /// Also match the coarse templates every k-th iteration and keep the
    /// larger match set.
    pub reselect_every: Option<usize>,
    pub matcher: MatcherConfig,
    /// Depth tolerance for the per-iteration consistency score.
    pub score_tau: f64,
}

impl Default for FineConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            rotation_tol_deg: 0.05,
            translation_tol: 5e-4,
            scale_tol: 1e-3,
            rescale: true,
            reselect_every: None,
            matcher: MatcherConfig::default(),
            score_tau: 0.02,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AlignmentResult {
    pub pose: ScaledModelPose,
    /// Coarse α times the product of every step's Δs.
    pub cumulative_scale: f64,
    pub coarse_scale: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<RefineStep>,
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub delta_rot_deg: f64,
    pub delta_t_m: f64,
    pub delta_s: f64,
    pub score: f64,
}

impl AlignmentResult {
    pub fn trace_records(&self) -> Vec<TraceRecord> {
        self.trace
            .iter()
            .zip(&self.scores)
            .map(|(s, score)| TraceRecord {
                delta_rot_deg: s.rotation_angle().to_degrees(),
                delta_t_m: s.delta_translation.norm(),
                delta_s: s.delta_scale,
                score: *score,
            })
            .collect()
    }
}

/// Scale update from matches between a view and the observation. Both point
/// sets are centered first so that a residual offset is not read as scale;
/// the update pivots about the predicted centroid `c`. Returns `(Δs, c)`.
fn scale_update(view: &TemplateView, obs: &Observation, set: &MatchSet, current: &ScaledModelPose) -> Option<(f64, Vector3<f64>)> {
    let lifted = lift_pairs(view, obs, set);
    if lifted.len() < MIN_MATCHES {
        return None;
    }
    let predicted: Vec<_> = lifted.iter().map(|(_, m, _)| current.apply(m)).collect();
    let observed: Vec<_> = lifted.iter().map(|(_, _, o)| *o).collect();
    let n = predicted.len() as f64;
    let pivot = (predicted.iter().sum::<Vector3<f64>>() / n, observed.iter().sum::<Vector3<f64>>() / n);
    let p: Vec<_> = predicted.iter().map(|x| x - pivot.0).collect();
    let o: Vec<_> = observed.iter().map(|x| x - pivot.1).collect();
    // A transient bad match set must not flip or destroy the scale.
    robust_scale(&p, &o).ok().map(|ds| (ds, pivot.0))
}

/// Alternates refiner steps with scale re-estimation until the update falls
/// below the tolerances or the iteration cap is hit.
pub fn fine_align(
    mesh_normalized: &TriangleMesh,
    obs: &Observation,
    coarse: &CoarseResult,
    refiner: &dyn Refiner,
    matcher: &dyn Matcher,
    templates: &[TemplateView],
    cfg: &FineConfig,
) -> Result<AlignmentResult> {
    let mut current = coarse.pose;
    let mut cumulative = coarse.pose.scale();
    let mut trace = Vec::new();
    let mut scores = Vec::new();
    let mut converged = false;
    for iteration in 1..=cfg.max_iterations {
        let mut step = refiner.refine_step(mesh_normalized, obs, &current)?;
        current = ScaledModelPose::new(current.scale(), step.apply(&current.pose))?;

        let mut ds = 1.0;
        if cfg.rescale {
            let view = render_view(mesh_normalized, &obs.intrinsics, &current)?;
            let mut best = (matcher.match_view(coarse.selected_view, &view, obs, &cfg.matcher), &view);
            if cfg.reselect_every.is_some_and(|k| k > 0 && iteration % k == 0) {
                for (i, t) in templates.iter().enumerate() {
                    let set = matcher.match_view(i, t, obs, &cfg.matcher);
                    if set.score() > best.0.score() {
                        best = (set, t);
                    }
                }
            }
            if let Some((update, pivot)) = scale_update(best.1, obs, &best.0, &current) {
                // Scale the placed model about the pivot: t⁺ = c + Δs·(t − c).
                let t = pivot + (current.pose.translation() - pivot) * update;
                let pose = RigidTransform::from_rotation_unchecked(*current.pose.rotation(), t);
                if let Ok(next) = ScaledModelPose::new(current.scale() * update, pose) {
                    current = next;
                    ds = update;
                }
            }
        }
        step.delta_scale = ds;
        cumulative *= ds;
        let metric = mesh_normalized.scaled(current.scale());
        scores.push(score_hypothesis(&metric, obs, &current.pose, cfg.score_tau).map_or(0.0, |h| h.score));
        trace.push(step);
        if step.rotation_angle().to_degrees() < cfg.rotation_tol_deg
            && step.delta_translation.norm() < cfg.translation_tol
            && (ds - 1.0).abs() < cfg.scale_tol
        {
            converged = true;
            break;
        }
    }
    Ok(AlignmentResult {
        pose: current,
        cumulative_scale: cumulative,
        coarse_scale: coarse.pose.scale(),
        iterations: trace.len(),
        converged,
        trace,
        scores,
    })
}
