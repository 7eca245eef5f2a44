use metric_align::metrics::*;
use metric_align::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
    (0..n)
        .map(|_| Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)))
        .collect()
}

fn pose(rng: &mut ChaCha8Rng) -> RigidTransform {
    let aa = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
    RigidTransform::from_axis_angle(aa, Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(0.6..1.2)))
}

fn brute_nearest(q: &Vector3<f64>, set: &[Vector3<f64>]) -> f64 {
    set.iter().map(|p| (p - q).norm()).fold(f64::INFINITY, f64::min)
}

#[test]
fn point_metrics_match_direct_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
    for _ in 0..100 {
        let n = rng.random_range(1..300);
        let pts = cloud(&mut rng, n);
        let (gt, est) = (pose(&mut rng), pose(&mut rng));
        let g: Vec<_> = pts.iter().map(|p| gt.apply(p)).collect();
        let e: Vec<_> = pts.iter().map(|p| est.apply(p)).collect();

        let mut s = 0.0;
        for i in 0..n {
            s += (e[i] - g[i]).norm();
        }
        assert!((add(&pts, &gt, &est).unwrap() - s / n as f64).abs() < 1e-12);

        let mut s = 0.0;
        for gi in &g {
            s += brute_nearest(gi, &e);
        }
        let adds_v = adds(&pts, &gt, &est).unwrap();
        assert!((adds_v - s / n as f64).abs() < 1e-12);
        assert!(adds_v <= add(&pts, &gt, &est).unwrap());

        let syms = SymmetrySet::discrete(&Vector3::new(0.3, 0.1, 1.0), 3).unwrap();
        let mut best = f64::INFINITY;
        let mut best_px = f64::INFINITY;
        for sym in syms.transforms() {
            let mut worst: f64 = 0.0;
            let mut worst_px: f64 = 0.0;
            for (i, p) in pts.iter().enumerate() {
                let q = gt.apply(&sym.apply(p));
                worst = worst.max((e[i] - q).norm());
                worst_px = worst_px.max((k.project(&e[i]).unwrap() - k.project(&q).unwrap()).norm());
            }
            best = best.min(worst);
            best_px = best_px.min(worst_px);
        }
        assert!((mssd(&pts, &syms, &gt, &est).unwrap() - best).abs() < 1e-12);
        assert!((mspd(&pts, &syms, &k, &gt, &est).unwrap() - best_px).abs() < 1e-9);

        let m = rng.random_range(1..300);
        let other = cloud(&mut rng, m);
        let ab: f64 = pts.iter().map(|p| brute_nearest(p, &other)).sum::<f64>() / n as f64;
        let ba: f64 = other.iter().map(|p| brute_nearest(p, &pts)).sum::<f64>() / m as f64;
        assert!((chamfer(&pts, &other).unwrap() - 0.5 * (ab + ba)).abs() < 1e-12);

        if n >= 2 {
            let mut d: f64 = 0.0;
            for i in 0..n {
                for j in 0..n {
                    d = d.max((pts[i] - pts[j]).norm());
                }
            }
            assert_eq!(diameter(&pts).unwrap(), d);
        }
    }
}

fn arb_pose() -> impl Strategy<Value = RigidTransform> {
    (prop::array::uniform3(-3.0..3.0f64), prop::array::uniform3(-0.2..0.2f64), 0.5..2.0f64)
        .prop_map(|(aa, t, z)| RigidTransform::from_axis_angle(Vector3::from(aa), Vector3::new(t[0], t[1], z)))
}

fn arb_cloud() -> impl Strategy<Value = Vec<Vector3<f64>>> {
    prop::collection::vec(prop::array::uniform3(-0.1..0.1f64).prop_map(Vector3::from), 1..60)
}

proptest! {
    #[test]
    fn adds_never_exceeds_add(pts in arb_cloud(), gt in arb_pose(), est in arb_pose()) {
        let a = add(&pts, &gt, &est).unwrap();
        let s = adds(&pts, &gt, &est).unwrap();
        prop_assert!(s >= 0.0 && s <= a);
    }

    #[test]
    fn add_is_invariant_under_left_composition(pts in arb_cloud(), gt in arb_pose(), est in arb_pose(), w in arb_pose()) {
        let a = add(&pts, &gt, &est).unwrap();
        let b = add(&pts, &w.compose(&gt), &w.compose(&est)).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn more_symmetries_never_increase_mssd(pts in arb_cloud(), gt in arb_pose(), est in arb_pose(), n in 2usize..8) {
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        let none = SymmetrySet::identity();
        let many = SymmetrySet::discrete(&Vector3::z(), n).unwrap();
        prop_assert!(mssd(&pts, &many, &gt, &est).unwrap() <= mssd(&pts, &none, &gt, &est).unwrap());
        if let (Ok(a), Ok(b)) = (mspd(&pts, &many, &k, &gt, &est), mspd(&pts, &none, &k, &gt, &est)) {
            prop_assert!(a <= b);
        }
    }

    #[test]
    fn ar_is_the_mean_of_three_recalls(
        vsd in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 10), 1..20),
        mssd_v in prop::collection::vec(0.0..0.5f64, 20),
        mspd_v in prop::collection::vec(0.0..80.0f64, 20),
    ) {
        let errors: Vec<PoseErrors> = vsd.into_iter().enumerate().map(|(i, v)| PoseErrors { vsd: v, mssd: mssd_v[i], mspd: mspd_v[i] }).collect();
        let r = bop_average_recall(&errors, 0.3, 800.0);
        prop_assert_eq!(r.ar, (r.vsd_recall + r.mssd_recall + r.mspd_recall) / 3.0);
        prop_assert!((0.0..=1.0).contains(&r.ar));
    }
}
