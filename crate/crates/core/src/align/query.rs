use nalgebra::{Rotation3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::coarse::{coarse_from_matches, CoarseConfig};
use super::refine::Refiner;
use crate::error::{Error, Result};
use crate::matching::{match_all, Matcher};
use crate::mesh::TriangleMesh;
use crate::raster::{rasterize, Observation, TemplateView};
use crate::{RigidTransform, ScaledModelPose};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HypothesisScore {
    pub hypothesis: RigidTransform,
    /// Fraction of the render/mask union with consistent depth.
    pub score: f64,
}

/// `|{p ∈ render ∩ mask : |d_render − d_obs| < τ}| / |render ∪ mask|`.
pub fn score_hypothesis(mesh_metric: &TriangleMesh, obs: &Observation, hypothesis: &RigidTransform, tau: f64) -> Result<HypothesisScore> {
    let (depth, mask) = rasterize(mesh_metric, &obs.intrinsics, hypothesis)?;
    let union = mask.union_count(&obs.mask);
    let agree = mask
        .pixels()
        .filter(|&(x, y)| obs.mask.get(x, y) && (depth.get(x, y) - obs.depth.get(x, y)).abs() < tau)
        .count();
    Ok(HypothesisScore {
        hypothesis: *hypothesis,
        score: if union == 0 { 0.0 } else { agree as f64 / union as f64 },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryConfig {
    pub coarse: CoarseConfig,
    /// Best-matched templates turned into extra hypotheses.
    pub template_hypotheses: usize,
    pub refine_steps: usize,
    pub tau: f64,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            coarse: CoarseConfig {
                lock_scale: true,
                ..Default::default()
            },
            template_hypotheses: 5,
            refine_steps: 8,
            tau: 0.02,
        }
    }
}

#[derive(Clone, Debug)]
pub struct QueryEstimate {
    /// Camera-from-object pose of the metric mesh.
    pub pose: RigidTransform,
    pub selected: usize,
    pub candidates: Vec<HypothesisScore>,
}

/// Template pose moved so that its rendered surface centroid lands on the
/// observed centroid, with the rotation turned by the same viewing-ray change.
fn recentered(template: &TemplateView, observed_centroid: &Vector3<f64>) -> Option<RigidTransform> {
    let k = &template.intrinsics;
    let mut sum = Vector3::zeros();
    let mut n = 0usize;
    for (x, y) in template.mask.pixels() {
        if let Ok(p) = k.backproject(&Vector2::new(x as f64, y as f64), template.depth.get(x, y)) {
            sum += p;
            n += 1;
        }
    }
    if n == 0 {
        return None;
    }
    let c_t = sum / n as f64;
    let turn = Rotation3::rotation_between(&c_t, observed_centroid)?;
    let pose = &template.camera_from_object;
    // The object origin keeps its (turned) offset from the surface centroid.
    let translation = observed_centroid + turn * (pose.translation() - c_t);
    Some(RigidTransform::from_rotation_unchecked(turn.matrix() * pose.rotation(), translation).renormalized())
}

/// Render-compare-select: hypotheses from a scale-locked coarse solve and
/// from the best-matched templates, each refined and scored by depth
/// consistency. Ties go to the lowest hypothesis index.
pub fn estimate_query_pose(
    mesh_metric: &TriangleMesh,
    query: &Observation,
    templates_metric: &[TemplateView],
    matcher: &dyn Matcher,
    refiner: &dyn Refiner,
    cfg: &QueryConfig,
) -> Result<QueryEstimate> {
    let sets = match_all(matcher, templates_metric, query, &cfg.coarse.matcher);
    let mut hypotheses = Vec::new();
    let coarse_cfg = CoarseConfig {
        lock_scale: true,
        ..cfg.coarse.clone()
    };
    if let Ok(c) = coarse_from_matches(query, templates_metric, &sets, &coarse_cfg) {
        hypotheses.push(c.pose.pose);
    }
    let observed = query.masked_points(1);
    if !observed.is_empty() {
        let centroid = observed.iter().map(|(_, p)| p).sum::<Vector3<f64>>() / observed.len() as f64;
        let mut ranked: Vec<usize> = (0..sets.len()).filter(|&i| sets[i].score() > 0).collect();
        ranked.sort_by_key(|&i| (std::cmp::Reverse(sets[i].score()), i));
        for &i in ranked.iter().take(cfg.template_hypotheses) {
            if let Some(h) = recentered(&templates_metric[sets[i].view_index], &centroid) {
                hypotheses.push(h);
            }
        }
    }
    if hypotheses.is_empty() {
        return Err(Error::NoHypothesis);
    }
    let scored: Vec<Option<HypothesisScore>> = hypotheses
        .par_iter()
        .map(|h| {
            let mut pose = *h;
            for _ in 0..cfg.refine_steps {
                match refiner.refine_step(mesh_metric, query, &ScaledModelPose::unit(pose)) {
                    Ok(step) => {
                        pose = step.apply(&pose);
                        if step.rotation_angle() < 1e-5 && step.delta_translation.norm() < 1e-6 {
                            break;
                        }
                    }
                    Err(_) => break,
                }
            }
            score_hypothesis(mesh_metric, query, &pose, cfg.tau).ok()
        })
        .collect();
    let mut best: Option<usize> = None;
    for (i, s) in scored.iter().enumerate() {
        if let Some(s) = s {
            if best.is_none_or(|b| s.score > scored[b].unwrap().score) {
                best = Some(i);
            }
        }
    }
    let selected = best.ok_or(Error::NoHypothesis)?;
    Ok(QueryEstimate {
        pose: scored[selected].unwrap().hypothesis,
        selected,
        candidates: scored.into_iter().flatten().collect(),
    })
}
