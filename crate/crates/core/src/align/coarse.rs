use serde::{Deserialize, Serialize};

use super::pnp::{pnp_ransac, PnpConfig};
use super::robust_scale;
use crate::error::{Error, Result};
use crate::matching::{lift_pairs, match_all, select_best_view, MatchSet, Matcher, MatcherConfig, MIN_MATCHES};
use crate::raster::{Observation, TemplateView};
use crate::{Correspondence2D3D, RigidTransform, ScaledModelPose};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoarseConfig {
    pub matcher: MatcherConfig,
    pub pnp: PnpConfig,
    /// Keep the scale at 1 (the mesh is already metric).
    pub lock_scale: bool,
}

#[derive(Clone, Debug)]
pub struct CoarseResult {
    /// Rotation `R`, translation `α·t`, scale `α`.
    pub pose: ScaledModelPose,
    pub selected_view: usize,
    /// PnP inliers: observation pixel and model-frame template point.
    pub inlier_pairs: Vec<Correspondence2D3D>,
}

/// Matches all templates, then solves on the best one.
pub fn coarse_align(
    obs: &Observation,
    templates: &[TemplateView],
    matcher: &dyn Matcher,
    cfg: &CoarseConfig,
) -> Result<CoarseResult> {
    if obs.mask.is_empty() {
        return Err(Error::DegenerateInput("observation mask is empty".into()));
    }
    let sets = match_all(matcher, templates, obs, &cfg.matcher);
    coarse_from_matches(obs, templates, &sets, cfg)
}

/// The solve half of [`coarse_align`], for callers that already matched.
pub fn coarse_from_matches(
    obs: &Observation,
    templates: &[TemplateView],
    sets: &[MatchSet],
    cfg: &CoarseConfig,
) -> Result<CoarseResult> {
    let best = select_best_view(sets)?;
    let template = &templates[best.view_index];
    let lifted = lift_pairs(template, obs, &best);
    if lifted.len() < MIN_MATCHES {
        return Err(Error::TooFewCorrespondences {
            found: lifted.len(),
            needed: MIN_MATCHES,
        });
    }
    let corrs: Vec<Correspondence2D3D> = lifted
        .iter()
        .map(|(pixel, model, _)| Correspondence2D3D {
            pixel: *pixel,
            point: *model,
        })
        .collect();
    let (pose, inliers) = pnp_ransac(&corrs, &obs.intrinsics, &cfg.pnp)?;

    // P̂ = R·P′ + t against the lifted observation points P.
    let predicted: Vec<_> = inliers.iter().map(|&i| pose.apply(&lifted[i].1)).collect();
    let observed: Vec<_> = inliers.iter().map(|&i| lifted[i].2).collect();
    let alpha = if cfg.lock_scale { 1.0 } else { robust_scale(&predicted, &observed)? };
    let metric = RigidTransform::from_rotation_unchecked(*pose.rotation(), pose.translation() * alpha);
    Ok(CoarseResult {
        pose: ScaledModelPose::new(alpha, metric)?,
        selected_view: best.view_index,
        inlier_pairs: inliers.iter().map(|&i| corrs[i]).collect(),
    })
}
