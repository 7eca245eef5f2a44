//! Metric alignment of a normalized mesh to an observation and pose
//! estimation in further views.
//!
//! * [`coarse_align`]: best template by match count, PnP on lifted template
//!   points, closed-form scale.
//! * [`fine_align`]: alternates refiner pose updates with scale
//!   re-estimation; the model scale is the running product of the updates.
//! * [`estimate_query_pose`]: hypotheses from matching, refined and ranked by
//!   depth consistency.

mod coarse;
mod fine;
pub mod pnp;
mod query;
mod refine;

pub use coarse::{coarse_align, coarse_from_matches, CoarseConfig, CoarseResult};
pub use fine::{fine_align, AlignmentResult, FineConfig, TraceRecord};
pub use pnp::{pnp_ransac, PnpConfig};
pub use query::{estimate_query_pose, score_hypothesis, HypothesisScore, QueryConfig, QueryEstimate};
pub use refine::{IcpRefiner, RefineStep, Refiner};

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geom::{estimate_scale, so3_geodesic_distance};
use crate::RigidTransform;

/// Rotation error in degrees and translation error (mesh units) between two
/// camera-from-object poses.
pub fn pose_error(estimate: &RigidTransform, truth: &RigidTransform) -> (f64, f64) {
    (
        so3_geodesic_distance(estimate, truth).to_degrees(),
        (estimate.translation() - truth.translation()).norm(),
    )
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values[values.len() / 2]
}

/// [`estimate_scale`] after discarding pairs whose residual under the first
/// estimate exceeds three times the median (with a floor of 0.1 % of the
/// median observed depth). Matches landing on the wrong side of a depth edge
/// otherwise bias the estimate.
pub fn robust_scale(predicted: &[Vector3<f64>], observed: &[Vector3<f64>]) -> Result<f64> {
    let alpha = estimate_scale(predicted, observed)?;
    let residuals: Vec<f64> = predicted.iter().zip(observed).map(|(p, o)| (p * alpha - o).norm()).collect();
    let mut depths: Vec<f64> = observed.iter().map(|o| o.z.abs()).collect();
    let gate = (3.0 * median(&mut residuals.clone())).max(1e-3 * median(&mut depths));
    let keep: Vec<usize> = (0..residuals.len()).filter(|&i| residuals[i] <= gate).collect();
    if keep.len() == predicted.len() {
        return Ok(alpha);
    }
    if keep.len() < 3 {
        return Err(Error::DegenerateInput("too few pairs agree on a scale".into()));
    }
    let p: Vec<_> = keep.iter().map(|&i| predicted[i]).collect();
    let o: Vec<_> = keep.iter().map(|&i| observed[i]).collect();
    estimate_scale(&p, &o)
}
