//! Perspective-n-Point: EPnP inside seeded RANSAC, then Levenberg–Marquardt
//! on the reprojection error of the consensus set.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, SymmetricEigen, Vector2, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{CameraIntrinsics, Correspondence2D3D, RigidTransform};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PnpConfig {
    pub max_iterations: usize,
    pub threshold_px: f64,
    pub sample_size: usize,
    /// Early exit once this probability of having drawn an all-inlier
    /// sample is reached.
    pub confidence: f64,
    pub seed: u64,
}

impl Default for PnpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            threshold_px: 3.0,
            sample_size: 6,
            confidence: 0.9999,
            seed: 0,
        }
    }
}

/// Pixel distance between the projection of `p` under `pose` and `pixel`;
/// infinite behind the camera.
pub fn reprojection_error(pose: &RigidTransform, p: &Vector3<f64>, pixel: &Vector2<f64>, k: &CameraIntrinsics) -> f64 {
    let x = pose.apply(p);
    if x.z <= 0.0 {
        return f64::INFINITY;
    }
    (k.project_unchecked(&x) - pixel).norm()
}

/// Robust camera-from-model pose and the indices of its inliers.
pub fn pnp_ransac(corrs: &[Correspondence2D3D], k: &CameraIntrinsics, cfg: &PnpConfig) -> Result<(RigidTransform, Vec<usize>)> {
    let n = corrs.len();
    if n < 4 {
        return Err(Error::TooFewCorrespondences { found: n, needed: 4 });
    }
    let s = cfg.sample_size.clamp(4, n);
    let th2 = cfg.threshold_px * cfg.threshold_px;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(f64, RigidTransform)> = None;
    let mut best_inliers = 0usize;
    let mut needed = cfg.max_iterations as f64;
    let mut it = 0;
    while it < cfg.max_iterations && (it as f64) < needed {
        it += 1;
        let sample: Vec<usize> = if s == n {
            (0..n).collect()
        } else {
            rand::seq::index::sample(&mut rng, n, s).into_vec()
        };
        let pts: Vec<_> = sample.iter().map(|&i| corrs[i].point).collect();
        let px: Vec<_> = sample.iter().map(|&i| corrs[i].pixel).collect();
        let Some(pose) = epnp(&pts, &px, k) else { continue };
        let mut cost = 0.0;
        let mut inliers = 0;
        for c in corrs {
            let e = reprojection_error(&pose, &c.point, &c.pixel, k);
            let e2 = e * e;
            if e2 < th2 {
                inliers += 1;
                cost += e2;
            } else {
                cost += th2;
            }
        }
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, pose));
            best_inliers = inliers;
            let w = inliers as f64 / n as f64;
            let p_good = w.powi(s as i32);
            needed = if p_good >= 1.0 {
                0.0
            } else if p_good <= 0.0 {
                f64::INFINITY
            } else {
                ((1.0 - cfg.confidence).ln() / (1.0 - p_good).ln()).ceil()
            };
        }
        if s == n {
            break;
        }
    }
    let Some((_, mut pose)) = best else { return Err(Error::NoConsensus) };
    if best_inliers < 4 {
        return Err(Error::NoConsensus);
    }
    let mut inliers = inlier_indices(&pose, corrs, k, cfg.threshold_px);
    for _ in 0..2 {
        if inliers.len() < 4 {
            break;
        }
        let pts: Vec<_> = inliers.iter().map(|&i| corrs[i].point).collect();
        let px: Vec<_> = inliers.iter().map(|&i| corrs[i].pixel).collect();
        pose = refine_reprojection(&pose, &pts, &px, k, 50);
        inliers = inlier_indices(&pose, corrs, k, cfg.threshold_px);
    }
    if inliers.len() < 4 {
        return Err(Error::NoConsensus);
    }
    Ok((pose, inliers))
}

fn inlier_indices(pose: &RigidTransform, corrs: &[Correspondence2D3D], k: &CameraIntrinsics, th: f64) -> Vec<usize> {
    corrs
        .iter()
        .enumerate()
        .filter(|(_, c)| reprojection_error(pose, &c.point, &c.pixel, k) < th)
        .map(|(i, _)| i)
        .collect()
}

/// Least-squares rigid fit `dst ≈ R·src + t`.
pub fn kabsch(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Option<RigidTransform> {
    let n = src.len() as f64;
    let ms = src.iter().sum::<Vector3<f64>>() / n;
    let md = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (a, b) in src.iter().zip(dst) {
        h += (a - ms) * (b - md).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    if !r.iter().all(|x| x.is_finite()) {
        return None;
    }
    Some(RigidTransform::from_rotation_unchecked(r, md - r * ms))
}

/// EPnP on at least four correspondences; `None` for degenerate input.
pub fn epnp(points: &[Vector3<f64>], pixels: &[Vector2<f64>], k: &CameraIntrinsics) -> Option<RigidTransform> {
    let n = points.len();
    if n < 4 || pixels.len() != n {
        return None;
    }
    // Control points from the principal axes of the model points.
    let c0 = points.iter().sum::<Vector3<f64>>() / n as f64;
    let cov = points.iter().fold(Matrix3::zeros(), |acc, p| acc + (p - c0) * (p - c0).transpose()) / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut axes: Vec<(f64, Vector3<f64>)> = (0..3).map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).into_owned())).collect();
    axes.sort_by(|a, b| b.0.total_cmp(&a.0));
    if !(axes[0].0 > 0.0) || axes[1].0 < 1e-10 * axes[0].0 {
        return None;
    }
    let planar = axes[2].0 < 1e-8 * axes[0].0;
    let nc = if planar { 3 } else { 4 };
    let mut ctrl = vec![c0];
    for (l, v) in axes.iter().take(nc - 1) {
        ctrl.push(c0 + v * l.sqrt());
    }
    let alphas: Vec<Vec<f64>> = points
        .iter()
        .map(|p| {
            let d = p - c0;
            let mut a = vec![0.0; nc];
            for j in 1..nc {
                let e = ctrl[j] - c0;
                a[j] = d.dot(&e) / e.norm_squared();
            }
            a[0] = 1.0 - a[1..].iter().sum::<f64>();
            a
        })
        .collect();

    let dim = 3 * nc;
    let mut m = DMatrix::zeros(2 * n, dim);
    for (i, (a, px)) in alphas.iter().zip(pixels).enumerate() {
        let xn = (px.x - k.cx) / k.fx;
        let yn = (px.y - k.cy) / k.fy;
        for j in 0..nc {
            m[(2 * i, 3 * j)] = a[j];
            m[(2 * i, 3 * j + 2)] = -a[j] * xn;
            m[(2 * i + 1, 3 * j + 1)] = a[j];
            m[(2 * i + 1, 3 * j + 2)] = -a[j] * yn;
        }
    }
    let mtm = m.transpose() * &m;
    let eig = SymmetricEigen::new(mtm);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let kernel: Vec<DVector<f64>> = order.iter().take(4.min(dim)).map(|&i| eig.eigenvectors.column(i).into_owned()).collect();

    let pairs: Vec<(usize, usize)> = (0..nc).flat_map(|a| (a + 1..nc).map(move |b| (a, b))).collect();
    let world_d2: Vec<f64> = pairs.iter().map(|&(a, b)| (ctrl[a] - ctrl[b]).norm_squared()).collect();
    let diff = |v: &DVector<f64>, a: usize, b: usize| -> Vector3<f64> {
        Vector3::new(v[3 * a] - v[3 * b], v[3 * a + 1] - v[3 * b + 1], v[3 * a + 2] - v[3 * b + 2])
    };
    // kdiff[k][p]: control-point difference of pair p in kernel vector k.
    let kdiff: Vec<Vec<Vector3<f64>>> = kernel.iter().map(|v| pairs.iter().map(|&(a, b)| diff(v, a, b)).collect()).collect();

    let mut candidates: Vec<Vec<f64>> = Vec::new();
    // One kernel vector.
    {
        let (num, den) = kdiff[0]
            .iter()
            .zip(&world_d2)
            .fold((0.0, 0.0), |(n, d), (v, w)| (n + v.norm() * w.sqrt(), d + v.norm_squared()));
        if den > 0.0 {
            candidates.push(vec![num / den]);
        }
    }
    // Two and three kernel vectors, linearized in the products βₐβ_b.
    for nk in [2usize, 3] {
        let unknowns: Vec<(usize, usize)> = (0..nk).flat_map(|a| (a..nk).map(move |b| (a, b))).collect();
        if unknowns.len() > pairs.len() {
            continue;
        }
        let mut l = DMatrix::zeros(pairs.len(), unknowns.len());
        for p in 0..pairs.len() {
            for (u, &(a, b)) in unknowns.iter().enumerate() {
                let f = if a == b { 1.0 } else { 2.0 };
                l[(p, u)] = f * kdiff[a][p].dot(&kdiff[b][p]);
            }
        }
        let rhs = DVector::from_vec(world_d2.clone());
        let Ok(sol) = l.clone().svd(true, true).solve(&rhs, 1e-12) else { continue };
        let b11 = sol[0];
        if !(b11.abs() > 0.0) {
            continue;
        }
        let b1 = b11.abs().sqrt() * if b11 < 0.0 { -1.0 } else { 1.0 };
        let mut betas = vec![b1];
        for j in 1..nk {
            betas.push(sol[j] / b1);
        }
        candidates.push(betas);
    }

    let nb = kernel.len().min(if planar { 3 } else { 4 });
    let mut best: Option<(f64, RigidTransform)> = None;
    for mut betas in candidates {
        betas.resize(nb, 0.0);
        gauss_newton_betas(&mut betas, &kdiff, &world_d2);
        let mut cam_ctrl: Vec<Vector3<f64>> = (0..nc)
            .map(|j| {
                let mut c = Vector3::zeros();
                for (bk, v) in betas.iter().zip(&kernel) {
                    c += Vector3::new(v[3 * j], v[3 * j + 1], v[3 * j + 2]) * *bk;
                }
                c
            })
            .collect();
        let cam_pts = |ctrl: &[Vector3<f64>]| -> Vec<Vector3<f64>> {
            alphas.iter().map(|a| a.iter().zip(ctrl).map(|(w, c)| c * *w).sum()).collect()
        };
        let mut pc = cam_pts(&cam_ctrl);
        if pc.iter().map(|p| p.z).sum::<f64>() < 0.0 {
            cam_ctrl.iter_mut().for_each(|c| *c = -*c);
            pc = cam_pts(&cam_ctrl);
        }
        let Some(pose) = kabsch(points, &pc) else { continue };
        let err: f64 = points.iter().zip(pixels).map(|(p, u)| reprojection_error(&pose, p, u, k).powi(2)).sum();
        if err.is_finite() && best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, pose));
        }
    }
    best.map(|(_, p)| p)
}

fn gauss_newton_betas(betas: &mut [f64], kdiff: &[Vec<Vector3<f64>>], world_d2: &[f64]) {
    let nb = betas.len();
    let np = world_d2.len();
    for _ in 0..10 {
        let mut j = DMatrix::zeros(np, nb);
        let mut r = DVector::zeros(np);
        for p in 0..np {
            let v: Vector3<f64> = (0..nb).map(|k| kdiff[k][p] * betas[k]).sum();
            r[p] = v.norm_squared() - world_d2[p];
            for k in 0..nb {
                j[(p, k)] = 2.0 * v.dot(&kdiff[k][p]);
            }
        }
        let Ok(delta) = j.svd(true, true).solve(&(-r), 1e-12) else { return };
        if !delta.iter().all(|d| d.is_finite()) {
            return;
        }
        for k in 0..nb {
            betas[k] += delta[k];
        }
        if delta.norm() < 1e-14 * betas.iter().map(|b| b * b).sum::<f64>().sqrt() {
            return;
        }
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Levenberg–Marquardt on the summed squared reprojection error. Rotation
/// updates are applied on the left: `R ← exp(ω)·R`.
pub fn refine_reprojection(
    pose: &RigidTransform,
    points: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
    k: &CameraIntrinsics,
    max_iterations: usize,
) -> RigidTransform {
    let cost = |pose: &RigidTransform| -> f64 {
        points.iter().zip(pixels).map(|(p, u)| reprojection_error(pose, p, u, k).powi(2)).sum()
    };
    let mut current = *pose;
    let mut current_cost = cost(&current);
    if !current_cost.is_finite() {
        return current;
    }
    let mut lambda = 1e-3;
    for _ in 0..max_iterations {
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for (p, u) in points.iter().zip(pixels) {
            let rp = current.rotation() * p;
            let x = rp + current.translation();
            let (iz, iz2) = (1.0 / x.z, 1.0 / (x.z * x.z));
            let dproj = nalgebra::Matrix2x3::new(k.fx * iz, 0.0, -k.fx * x.x * iz2, 0.0, k.fy * iz, -k.fy * x.y * iz2);
            let res = k.project_unchecked(&x) - u;
            let mut j = nalgebra::Matrix2x6::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dproj * -skew(&rp)));
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dproj);
            h += j.transpose() * j;
            g += j.transpose() * res;
        }
        let mut improved = false;
        for _ in 0..10 {
            let mut damped = h;
            for i in 0..6 {
                damped[(i, i)] += lambda * h[(i, i)].max(1e-12);
            }
            let Some(delta) = damped.cholesky().map(|c| c.solve(&(-g))) else {
                lambda *= 10.0;
                continue;
            };
            let w = Vector3::new(delta[0], delta[1], delta[2]);
            let dt = Vector3::new(delta[3], delta[4], delta[5]);
            let rot = nalgebra::Rotation3::new(w).into_inner() * current.rotation();
            let candidate = RigidTransform::from_rotation_unchecked(rot, current.translation() + dt).renormalized();
            let c = cost(&candidate);
            if c < current_cost {
                let rel = (current_cost - c) / current_cost.max(1e-300);
                current = candidate;
                current_cost = c;
                lambda = (lambda * 0.1).max(1e-12);
                improved = rel > 1e-15;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    current
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::so3_geodesic_distance;
    use rand::Rng;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(572.0, 572.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn random_pose(rng: &mut impl Rng) -> RigidTransform {
        let aa = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * 2.5;
        RigidTransform::from_axis_angle(aa, Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(3.5..5.0)))
    }

    fn corrs(pose: &RigidTransform, pts: &[Vector3<f64>]) -> Vec<Correspondence2D3D> {
        pts.iter()
            .map(|p| Correspondence2D3D {
                pixel: k().project(&pose.apply(p)).unwrap(),
                point: *p,
            })
            .collect()
    }

    #[test]
    fn exact_cube_points_recover_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // Vertices and edge midpoints of a unit cube.
        let c = [-0.5, 0.0, 0.5];
        let cube: Vec<Vector3<f64>> = (0..27)
            .map(|i| Vector3::new(c[i % 3], c[(i / 3) % 3], c[i / 9]))
            .filter(|v| v.iter().filter(|x| **x == 0.0).count() <= 1)
            .collect();
        assert_eq!(cube.len(), 20);
        for _ in 0..20 {
            let gt = random_pose(&mut rng);
            let (pose, inliers) = pnp_ransac(&corrs(&gt, &cube), &k(), &PnpConfig::default()).unwrap();
            assert_eq!(inliers.len(), cube.len());
            assert!(so3_geodesic_distance(&pose, &gt) < 1e-6);
            assert!((pose.translation() - gt.translation()).norm() < 1e-8);
        }
    }

    #[test]
    fn planar_points_at_identity() {
        let pts: Vec<Vector3<f64>> = (0..12)
            .map(|i| Vector3::new((i % 4) as f64 * 0.3 - 0.45, (i / 4) as f64 * 0.3 - 0.3, 2.0))
            .collect();
        let gt = RigidTransform::identity();
        let (pose, _) = pnp_ransac(&corrs(&gt, &pts), &k(), &PnpConfig::default()).unwrap();
        assert!(so3_geodesic_distance(&pose, &gt) < 1e-8);
        assert!(pose.translation().norm() < 1e-8);
    }

    #[test]
    fn epnp_minimal_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let gt = random_pose(&mut rng);
            let pts: Vec<Vector3<f64>> = (0..6)
                .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let c = corrs(&gt, &pts);
            let pose = epnp(&pts, &c.iter().map(|c| c.pixel).collect::<Vec<_>>(), &k()).unwrap();
            assert!(so3_geodesic_distance(&pose, &gt) < 1e-6);
        }
    }

    #[test]
    fn outliers_and_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut good = 0;
        for trial in 0..20 {
            let gt = random_pose(&mut rng);
            let noise = rand_distr::Normal::new(0.0, 0.5).unwrap();
            let mut c: Vec<Correspondence2D3D> = Vec::new();
            let mut truth = Vec::new();
            for i in 0..50 {
                let p = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let mut px = k().project(&gt.apply(&p)).unwrap();
                let outlier = i < 20;
                if outlier {
                    px = Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
                } else {
                    px += Vector2::new(rand_distr::Distribution::sample(&noise, &mut rng), rand_distr::Distribution::sample(&noise, &mut rng));
                }
                truth.push(!outlier);
                c.push(Correspondence2D3D { pixel: px, point: p });
            }
            let cfg = PnpConfig {
                seed: trial,
                ..Default::default()
            };
            let (pose, inliers) = pnp_ransac(&c, &k(), &cfg).unwrap();
            let recovered = inliers.iter().filter(|&&i| truth[i]).count();
            if so3_geodesic_distance(&pose, &gt).to_degrees() < 0.5 && recovered as f64 >= 0.95 * 30.0 {
                good += 1;
            }
        }
        assert!(good >= 19, "{good}");
    }

    #[test]
    fn too_few_and_no_consensus() {
        let pts = vec![Vector3::new(0.0, 0.0, 1.0); 3];
        let c: Vec<_> = pts.iter().map(|p| Correspondence2D3D { pixel: Vector2::new(1.0, 1.0), point: *p }).collect();
        assert!(matches!(pnp_ransac(&c, &k(), &PnpConfig::default()), Err(Error::TooFewCorrespondences { found: 3, needed: 4 })));

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let junk: Vec<_> = (0..40)
            .map(|_| Correspondence2D3D {
                pixel: Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)),
                point: Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            })
            .collect();
        let cfg = PnpConfig {
            threshold_px: 0.01,
            ..Default::default()
        };
        assert!(matches!(pnp_ransac(&junk, &k(), &cfg), Err(Error::NoConsensus)));
    }

    #[test]
    fn kabsch_recovers_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let gt = random_pose(&mut rng);
        let src: Vec<Vector3<f64>> = (0..10).map(|_| Vector3::new(rng.random(), rng.random(), rng.random())).collect();
        let dst: Vec<_> = src.iter().map(|p| gt.apply(p)).collect();
        let fit = kabsch(&src, &dst).unwrap();
        assert!(so3_geodesic_distance(&fit, &gt) < 1e-10);
        assert!((fit.translation() - gt.translation()).norm() < 1e-10);
    }
}
