use proptest::prelude::*;

use occlusynth::cloud::PointCloud;
use occlusynth::geom::{Point3, Vec3};
use occlusynth::kernels::{gridding, GridNorm};
use occlusynth::metrics::{chamfer, fscore};
use occlusynth::postprocess::{merge_completion, MergeConfig, PROVENANCE};

fn point(r: f64) -> impl Strategy<Value = Point3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Point3::new(x, y, z))
}

fn cloud(r: f64, max: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(point(r), 1..max).prop_map(PointCloud::new)
}

fn rigid(c: &PointCloud, angle: f64, axis: Vec3, shift: Vec3) -> PointCloud {
    let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
    PointCloud::new(c.points.iter().map(|p| rot * p + shift).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chamfer_symmetric_and_zero_on_self(p in cloud(2.0, 80), q in cloud(2.0, 80)) {
        let a = chamfer(&p, &q).unwrap();
        let b = chamfer(&q, &p).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        prop_assert_eq!(chamfer(&p, &p).unwrap(), 0.0);
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn metrics_invariant_under_rigid_motion(
        p in cloud(1.0, 60),
        q in cloud(1.0, 60),
        angle in -3.1f64..3.1,
        axis in point(1.0).prop_filter("nonzero axis", |a| a.coords.norm() > 1e-3),
        shift in point(50.0),
    ) {
        let (axis, shift) = (axis.coords, shift.coords);
        let (mp, mq) = (rigid(&p, angle, axis, shift), rigid(&q, angle, axis, shift));
        let a = chamfer(&p, &q).unwrap();
        let b = chamfer(&mp, &mq).unwrap();
        prop_assert!((a - b).abs() <= 1e-9, "{} vs {}", a, b);
        let d = 0.37;
        let near = |a: &PointCloud, b: &PointCloud| {
            a.points.iter().any(|x| {
                let m = b.points.iter().map(|y| (x - y).norm()).fold(f64::INFINITY, f64::min);
                (m - d).abs() < 1e-9
            })
        };
        prop_assume!(!near(&p, &q) && !near(&q, &p));
        prop_assert_eq!(fscore(&p, &q, d).unwrap(), fscore(&mp, &mq, d).unwrap());
    }

    #[test]
    fn fscore_monotone_in_threshold(p in cloud(1.0, 60), q in cloud(1.0, 60), d in 0.001f64..1.0, k in 1.0f64..3.0) {
        let lo = fscore(&p, &q, d).unwrap();
        let hi = fscore(&p, &q, d * k).unwrap();
        prop_assert!(hi.precision >= lo.precision && hi.recall >= lo.recall && hi.fscore >= lo.fscore);
        prop_assert!((0.0..=1.0).contains(&lo.fscore));
    }

    #[test]
    fn gridding_conserves_mass(pts in prop::collection::vec(point(1.0), 1..400), n in 3usize..24) {
        let count = pts.len() as f64;
        let g = gridding(&PointCloud::normalized(pts), n, GridNorm::Sum).unwrap();
        prop_assert!((g.total() - count).abs() <= 1e-9 * count);
        prop_assert!(g.values().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn merge_keeps_input_and_threshold(input in cloud(1.0, 120), generated in cloud(1.2, 120), t in 0.01f64..0.5) {
        let cfg = MergeConfig { threshold: t };
        let merged = merge_completion(&input, &generated, &cfg).unwrap();
        prop_assert_eq!(&merged.points[..input.len()], &input.points[..]);
        let prov = &merged.extra(PROVENANCE).unwrap().values;
        prop_assert_eq!(prov.len(), merged.len());
        for (i, g) in merged.points.iter().enumerate().skip(input.len()) {
            prop_assert_eq!(prov[i], 1.0);
            prop_assert!(input.points.iter().all(|p| (p - g).norm_squared() >= t * t));
        }
        prop_assert_eq!(merge_completion(&merged, &generated, &cfg).unwrap(), merged);
    }
}
