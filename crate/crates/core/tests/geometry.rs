use neaf_core::bench::{synth_cloud, ShapeKind, ShapeSpec};
use neaf_core::geometry::{random_direction, unoriented_angle};
use neaf_core::{angle_offset, extract_patch, sample_sphere_uniform, unoriented_rmse, KdIndex, LabeledCloud, UnitVec3, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_force(points: &[Vec3], q: Vec3, k: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| (p.distance_squared(q), i)).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(_, i)| i).collect()
}

#[test]
fn knn_equals_brute_force_on_varied_clouds() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let clouds: Vec<Vec<Vec3>> = vec![
        (0..5000)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect(),
        // Thin sheet: every split lands on nearly the same plane.
        (0..3000)
            .map(|_| Vec3::new(rng.random(), rng.random(), 1e-6 * rng.random::<f64>()))
            .collect(),
        // Integer lattice with many equal distances.
        (0..1000)
            .map(|i| Vec3::new((i % 10) as f64, ((i / 10) % 10) as f64, (i / 100) as f64))
            .collect(),
        synth_cloud(&ShapeSpec::new(ShapeKind::Torus { major: 1.0, minor: 0.3 }, 4000, 2))
            .unwrap()
            .points()
            .to_vec(),
    ];
    for points in clouds {
        let index = KdIndex::from_points(points.clone());
        for t in 0..200 {
            let q = if t % 2 == 0 {
                points[rng.random_range(0..points.len())]
            } else {
                Vec3::new(rng.random_range(-1.0..11.0), rng.random_range(-1.0..11.0), rng.random_range(-1.0..11.0))
            };
            for k in [1, 7, 64] {
                assert_eq!(index.knn(q, k).unwrap(), brute_force(&points, q, k));
            }
        }
    }
}

#[test]
fn concurrent_queries_agree() {
    use rayon::prelude::*;
    let cloud = synth_cloud(&ShapeSpec::new(ShapeKind::Sphere { radius: 1.0 }, 3000, 4)).unwrap();
    let index = KdIndex::build(&cloud);
    let serial: Vec<_> = (0..cloud.len()).map(|i| index.knn(cloud.points()[i], 16).unwrap()).collect();
    let parallel: Vec<_> = (0..cloud.len())
        .into_par_iter()
        .map(|i| index.knn(cloud.points()[i], 16).unwrap())
        .collect();
    assert_eq!(serial, parallel);
}

#[test]
fn patch_round_trip_on_sphere() {
    let dirs = sample_sphere_uniform(2000, 8).unwrap();
    let cloud = LabeledCloud::unlabeled(dirs.iter().map(|d| d.vec()).collect()).unwrap();
    let index = KdIndex::build(&cloud);
    for i in (0..cloud.len()).step_by(97) {
        let patch = extract_patch(&index, &cloud, i, 32).unwrap();
        assert_eq!(patch.center_index(), i);
        assert_eq!(patch.coords().row(0).to_vec(), vec![0.0; 3]);
        let max = patch.coords().rows().into_iter().map(|r| r.dot(&r).sqrt()).fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-12);
        for (r, &j) in patch.neighbor_indices().iter().enumerate() {
            let back = patch.denormalize_row(r);
            let orig = cloud.points()[j];
            assert!((back - orig).norm() <= 1e-12 * orig.norm().max(1.0), "row {r}");
        }
    }
}

#[test]
fn angle_offset_symmetries_are_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10_000 {
        let g = random_direction(&mut rng);
        let q = random_direction(&mut rng);
        let a = angle_offset(g, q);
        assert_eq!(a, angle_offset(q, g));
        assert_eq!(a, angle_offset(-g, q));
        assert_eq!(a, angle_offset(g, -q));
        assert!((0.0..=std::f64::consts::FRAC_PI_2).contains(&a));
        assert!((a - unoriented_angle(g, q)).abs() < 1e-9);
    }
}

#[test]
fn rmse_hand_computed() {
    let z = UnitVec3::Z;
    let at = |deg: f64| {
        let t = deg.to_radians();
        UnitVec3::normalize(Vec3::new(t.sin(), 0.0, t.cos())).unwrap()
    };
    let r = unoriented_rmse(&[at(30.0), at(180.0 - 40.0)], &[z, z]).unwrap();
    assert!((r - ((30.0f64.powi(2) + 40.0f64.powi(2)) / 2.0).sqrt()).abs() < 1e-9, "{r}");
}

#[test]
fn sphere_samples_are_bitwise_reproducible() {
    let a = sample_sphere_uniform(5000, 77).unwrap();
    let b = sample_sphere_uniform(5000, 77).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_array().map(f64::to_bits) == y.to_array().map(f64::to_bits)));
    assert!(a.iter().all(|v| (v.vec().norm() - 1.0).abs() <= 1e-9));
}

#[test]
fn xyz_file_round_trip() {
    let cloud = synth_cloud(&ShapeSpec::new(ShapeKind::Cylinder { radius: 0.5, height: 2.0 }, 300, 1).with_noise(0.01))
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.xyz");
    cloud.write_xyz(&path).unwrap();
    assert_eq!(LabeledCloud::read_xyz(&path).unwrap(), cloud);
}
