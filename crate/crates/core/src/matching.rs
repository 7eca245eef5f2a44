//! Template-to-observation correspondences.
//!
//! [`Matcher`] is the contract the alignment stages consume. Two
//! implementations ship: [`OracleMatcher`], which derives pairs from a known
//! ground-truth pose with controllable noise and outliers, and
//! [`DepthPatchMatcher`], a purely geometric reference working on depth
//! curvature corners.

use std::io::Write;

use nalgebra::{Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{DepthMap, Mask, Observation, TemplateView};
use crate::{CameraIntrinsics, ScaledModelPose};

/// A view needs at least this many pairs to be usable for PnP.
pub const MIN_MATCHES: usize = 6;

/// Pixel pairs between one template and the observation.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchSet {
    pub view_index: usize,
    /// `(template_pixel, observation_pixel)`.
    pub pairs: Vec<(Vector2<f64>, Vector2<f64>)>,
}

impl MatchSet {
    pub fn empty(view_index: usize) -> Self {
        Self {
            view_index,
            pairs: Vec::new(),
        }
    }

    pub fn score(&self) -> usize {
        self.pairs.len()
    }

    /// One JSON object per pair: `{view, tu, tv, ou, ov}`.
    pub fn write_jsonl(&self, out: &mut impl Write) -> Result<()> {
        #[derive(Serialize)]
        struct Row {
            view: usize,
            tu: f64,
            tv: f64,
            ou: f64,
            ov: f64,
        }
        for (t, o) in &self.pairs {
            let row = Row {
                view: self.view_index,
                tu: t.x,
                tv: t.y,
                ou: o.x,
                ov: o.y,
            };
            serde_json::to_writer(&mut *out, &row)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatcherConfig {
    pub pixel_noise_sigma: f64,
    pub outlier_fraction: f64,
    pub max_matches: usize,
    pub rng_seed: u64,
    /// Grid step (pixels) for oracle surface sampling.
    pub sample_stride: u32,
    /// Lowe ratio for the depth-patch matcher.
    pub ratio: f64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            pixel_noise_sigma: 0.0,
            outlier_fraction: 0.0,
            max_matches: 1000,
            rng_seed: 0,
            sample_stride: 4,
            ratio: 0.8,
        }
    }
}

impl MatcherConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(Error::InvalidConfig("outlier_fraction must be in [0, 1)".into()));
        }
        if self.max_matches < 4 {
            return Err(Error::InvalidConfig("max_matches must be at least 4".into()));
        }
        if !(self.pixel_noise_sigma >= 0.0) || self.sample_stride == 0 || !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::InvalidConfig("bad matcher parameters".into()));
        }
        Ok(())
    }

    fn rng_for(&self, view_index: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.rng_seed ^ (view_index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

pub trait Matcher: Sync {
    /// Pairs hypothesized to image the same surface point. Deterministic for
    /// a given `cfg.rng_seed`; an empty set is a valid answer.
    fn match_view(&self, view_index: usize, template: &TemplateView, obs: &Observation, cfg: &MatcherConfig) -> MatchSet;
}

/// Matches every template in parallel.
pub fn match_all(matcher: &dyn Matcher, templates: &[TemplateView], obs: &Observation, cfg: &MatcherConfig) -> Vec<MatchSet> {
    use rayon::prelude::*;
    templates
        .par_iter()
        .enumerate()
        .map(|(i, t)| matcher.match_view(i, t, obs, cfg))
        .collect()
}

/// Highest score wins; ties go to the lowest view index.
pub fn select_best_view(matches: &[MatchSet]) -> Result<MatchSet> {
    let mut best: Option<&MatchSet> = None;
    for m in matches {
        best = match best {
            Some(b) if m.score() < b.score() || (m.score() == b.score() && m.view_index >= b.view_index) => Some(b),
            _ => Some(m),
        };
    }
    match best {
        Some(b) if b.score() > 0 => Ok(b.clone()),
        _ => Err(Error::AllEmpty),
    }
}

// ---- oracle -----------------------------------------------------------------------

/// Oracle output with the ground-truth outlier labels.
#[derive(Clone, Debug)]
pub struct OracleMatches {
    pub set: MatchSet,
    pub outlier: Vec<bool>,
}

impl OracleMatches {
    pub fn inlier_ratio(&self) -> f64 {
        if self.outlier.is_empty() {
            return 0.0;
        }
        self.outlier.iter().filter(|o| !**o).count() as f64 / self.outlier.len() as f64
    }
}

/// Depth agreement needed to call an observation pixel covisible.
fn covisible(rendered: f64, observed: f64) -> bool {
    (rendered - observed).abs() < 0.005 * rendered + 1e-3
}

/// Ground-truth pairs: template surface samples that are also visible in the
/// observation, projected through `gt_obs_pose` (model → observation camera).
pub fn oracle_match(
    view_index: usize,
    template: &TemplateView,
    obs: &Observation,
    gt_obs_pose: &ScaledModelPose,
    cfg: &MatcherConfig,
) -> Result<OracleMatches> {
    let mut rng = cfg.rng_for(view_index);
    let k = &obs.intrinsics;
    let stride = cfg.sample_stride.max(1);
    let mut pairs = Vec::new();
    for (x, y) in template.mask.pixels().filter(|(x, y)| x % stride == 0 && y % stride == 0) {
        let tp = Vector2::new(x as f64, y as f64);
        let Some(model) = template.lift_to_model(&tp) else { continue };
        let cam = gt_obs_pose.apply(&model);
        if cam.z <= 0.0 {
            continue;
        }
        let op = k.project_unchecked(&cam);
        if !k.contains(&op) || !obs.mask.at(&op) {
            continue;
        }
        match obs.depth.sample(&op) {
            Some(d) if covisible(cam.z, d) => pairs.push((tp, op)),
            _ => {}
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoCovisibleSurface);
    }
    if pairs.len() > cfg.max_matches {
        pairs.shuffle(&mut rng);
        pairs.truncate(cfg.max_matches);
        pairs.sort_by(|a, b| (a.0.y, a.0.x).partial_cmp(&(b.0.y, b.0.x)).unwrap());
    }
    if cfg.pixel_noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.pixel_noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let (w, h) = (k.width as f64 - 1.0, k.height as f64 - 1.0);
        for (_, op) in &mut pairs {
            op.x = (op.x + normal.sample(&mut rng)).clamp(0.0, w);
            op.y = (op.y + normal.sample(&mut rng)).clamp(0.0, h);
        }
    }
    let n_out = (cfg.outlier_fraction * pairs.len() as f64).round() as usize;
    let mut outlier = vec![false; pairs.len()];
    if n_out > 0 {
        let masked: Vec<(u32, u32)> = obs.mask.pixels().collect();
        let mut idx: Vec<usize> = (0..pairs.len()).collect();
        idx.shuffle(&mut rng);
        for &i in &idx[..n_out] {
            let (u, v) = masked[rng.random_range(0..masked.len())];
            pairs[i].1 = Vector2::new(u as f64, v as f64);
            outlier[i] = true;
        }
    }
    Ok(OracleMatches {
        set: MatchSet { view_index, pairs },
        outlier,
    })
}

/// [`Matcher`] backed by [`oracle_match`]; views without covisible surface
/// yield empty sets.
#[derive(Clone, Debug)]
pub struct OracleMatcher {
    pub gt_obs_pose: ScaledModelPose,
}

impl Matcher for OracleMatcher {
    fn match_view(&self, view_index: usize, template: &TemplateView, obs: &Observation, cfg: &MatcherConfig) -> MatchSet {
        oracle_match(view_index, template, obs, &self.gt_obs_pose, cfg)
            .map(|m| m.set)
            .unwrap_or_else(|_| MatchSet::empty(view_index))
    }
}

// ---- depth-patch reference matcher ---------------------------------------------------

#[derive(Clone, Debug)]
pub struct DepthPatchMatcher {
    /// Half-width of the descriptor patch in samples.
    pub patch_radius: i32,
    /// Pixel step between descriptor samples.
    pub patch_step: i32,
    /// Half-width of the structure-tensor window.
    pub window_radius: i32,
    /// Non-maximum suppression radius in pixels.
    pub nms_radius: i32,
    /// Absolute corner response floor.
    pub min_response: f64,
    /// Response threshold relative to the strongest corner.
    pub relative_response: f64,
    pub max_keypoints: usize,
}

impl Default for DepthPatchMatcher {
    fn default() -> Self {
        Self {
            patch_radius: 4,
            patch_step: 2,
            window_radius: 2,
            nms_radius: 3,
            min_response: 1e-4,
            relative_response: 0.01,
            max_keypoints: 400,
        }
    }
}

struct Keypoint {
    x: i32,
    y: i32,
    descriptor: Vec<f64>,
}

impl DepthPatchMatcher {
    fn keypoints(&self, depth: &DepthMap, mask: &Mask, k: &CameraIntrinsics) -> Vec<Keypoint> {
        let (w, h) = (depth.width() as i32, depth.height() as i32);
        let valid = |x: i32, y: i32| x >= 0 && y >= 0 && x < w && y < h && mask.get(x as u32, y as u32) && depth.get(x as u32, y as u32) > 0.0;
        let at = |x: i32, y: i32| depth.get(x as u32, y as u32);
        let idx = |x: i32, y: i32| (y * w + x) as usize;

        // Surface slope per pixel, made scale- and distance-free by f / z.
        let mut slope = vec![None::<[f64; 2]>; (w * h) as usize];
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                if valid(x, y) && valid(x - 1, y) && valid(x + 1, y) && valid(x, y - 1) && valid(x, y + 1) {
                    let z = at(x, y);
                    let sx = (at(x + 1, y) - at(x - 1, y)) * 0.5 * k.fx / z;
                    let sy = (at(x, y + 1) - at(x, y - 1)) * 0.5 * k.fy / z;
                    slope[idx(x, y)] = Some([sx.clamp(-5.0, 5.0), sy.clamp(-5.0, 5.0)]);
                }
            }
        }
        // Structure tensor of the two slope channels: corners of the
        // curvature field, not of the depth itself.
        let mut tensor = vec![None::<[f64; 3]>; (w * h) as usize];
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let (Some(l), Some(r), Some(u), Some(d)) =
                    (slope[idx(x - 1, y)], slope[idx(x + 1, y)], slope[idx(x, y - 1)], slope[idx(x, y + 1)])
                else {
                    continue;
                };
                let mut t = [0.0; 3];
                for c in 0..2 {
                    let gx = 0.5 * (r[c] - l[c]);
                    let gy = 0.5 * (d[c] - u[c]);
                    t[0] += gx * gx;
                    t[1] += gx * gy;
                    t[2] += gy * gy;
                }
                tensor[idx(x, y)] = Some(t);
            }
        }
        let reach = (self.patch_radius * self.patch_step).max(self.window_radius + 2);
        let mut response = vec![f64::NEG_INFINITY; (w * h) as usize];
        for y in reach..h - reach {
            for x in reach..w - reach {
                let mut m = [0.0; 3];
                let mut complete = true;
                'win: for dy in -self.window_radius..=self.window_radius {
                    for dx in -self.window_radius..=self.window_radius {
                        match tensor[idx(x + dx, y + dy)] {
                            Some(t) => {
                                m[0] += t[0];
                                m[1] += t[1];
                                m[2] += t[2];
                            }
                            None => {
                                complete = false;
                                break 'win;
                            }
                        }
                    }
                }
                if complete && self.patch_inside(x, y, &valid) {
                    let tr = m[0] + m[2];
                    response[idx(x, y)] = m[0] * m[2] - m[1] * m[1] - 0.05 * tr * tr;
                }
            }
        }
        let strongest = response.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let threshold = self.min_response.max(self.relative_response * strongest);
        let mut corners = Vec::new();
        for y in reach..h - reach {
            for x in reach..w - reach {
                let r = response[idx(x, y)];
                if !(r > threshold) {
                    continue;
                }
                let mut is_max = true;
                'nms: for dy in -self.nms_radius..=self.nms_radius {
                    for dx in -self.nms_radius..=self.nms_radius {
                        let (nx, ny) = (x + dx, y + dy);
                        if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= w || ny >= h {
                            continue;
                        }
                        let o = response[idx(nx, ny)];
                        // Lexicographic tie-break keeps plateaus to one point.
                        if o > r || (o == r && (ny, nx) < (y, x)) {
                            is_max = false;
                            break 'nms;
                        }
                    }
                }
                if is_max {
                    corners.push((r, x, y));
                }
            }
        }
        corners.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));
        corners.truncate(self.max_keypoints);
        corners
            .into_iter()
            .filter_map(|(_, x, y)| self.describe(depth, x, y).map(|descriptor| Keypoint { x, y, descriptor }))
            .collect()
    }

    fn patch_inside(&self, x: i32, y: i32, valid: &impl Fn(i32, i32) -> bool) -> bool {
        let (r, s) = (self.patch_radius, self.patch_step);
        (-r..=r).all(|j| (-r..=r).all(|i| valid(x + i * s, y + j * s)))
    }

    /// Depth patch with its mean removed and unit L2 norm.
    fn describe(&self, depth: &DepthMap, x: i32, y: i32) -> Option<Vec<f64>> {
        let (r, s) = (self.patch_radius, self.patch_step);
        let mut d: Vec<f64> = (-r..=r)
            .flat_map(|j| (-r..=r).map(move |i| (i, j)))
            .map(|(i, j)| depth.get((x + i * s) as u32, (y + j * s) as u32))
            .collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        d.iter_mut().for_each(|v| *v -= mean);
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 1e-12 * mean.abs().max(1e-12)) {
            return None;
        }
        d.iter_mut().for_each(|v| *v /= norm);
        Some(d)
    }

    fn nearest_two(query: &[f64], candidates: &[Keypoint]) -> Option<(usize, f64, f64)> {
        let mut best = (usize::MAX, f64::INFINITY, f64::INFINITY);
        for (i, c) in candidates.iter().enumerate() {
            let d: f64 = query.iter().zip(&c.descriptor).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if d < best.1 {
                best = (i, d, best.1);
            } else if d < best.2 {
                best.2 = d;
            }
        }
        (best.0 != usize::MAX).then_some(best)
    }

    pub fn keypoint_count(&self, depth: &DepthMap, mask: &Mask, k: &CameraIntrinsics) -> usize {
        self.keypoints(depth, mask, k).len()
    }
}

impl Matcher for DepthPatchMatcher {
    fn match_view(&self, view_index: usize, template: &TemplateView, obs: &Observation, cfg: &MatcherConfig) -> MatchSet {
        let tk = self.keypoints(&template.depth, &template.mask, &template.intrinsics);
        let ok = self.keypoints(&obs.depth, &obs.mask, &obs.intrinsics);
        let mut pairs = Vec::new();
        for t in &tk {
            let Some((j, d1, d2)) = Self::nearest_two(&t.descriptor, &ok) else { break };
            if !(d1 < cfg.ratio * d2 || (d1 == 0.0 && d2 > 0.0)) {
                continue;
            }
            let Some((back, _, _)) = Self::nearest_two(&ok[j].descriptor, &tk) else { continue };
            if !std::ptr::eq(&tk[back], t) {
                continue;
            }
            pairs.push((
                Vector2::new(t.x as f64, t.y as f64),
                Vector2::new(ok[j].x as f64, ok[j].y as f64),
            ));
            if pairs.len() == cfg.max_matches {
                break;
            }
        }
        MatchSet { view_index, pairs }
    }
}

/// Lifts each pair: template pixel to model coordinates, observation pixel
/// to the observation camera frame. Pairs failing either lift are dropped.
pub fn lift_pairs(template: &TemplateView, obs: &Observation, set: &MatchSet) -> Vec<(Vector2<f64>, Vector3<f64>, Vector3<f64>)> {
    set.pairs
        .iter()
        .filter_map(|(tp, op)| {
            let model = template.lift_to_model(tp)?;
            let cam = obs.lift(op)?;
            Some((*op, model, cam))
        })
        .collect()
}
