use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use neaf_core::bench::{synth_cloud, ShapeKind, ShapeSpec};
use neaf_core::{extract_patch, pca_normal, jet2_normal, AngleFieldModel, InferConfig, KdIndex, NormalEstimator};

fn sphere(points: usize) -> neaf_core::LabeledCloud {
    synth_cloud(&ShapeSpec::new(ShapeKind::Sphere { radius: 1.0 }, points, 1)).unwrap()
}

fn knn(c: &mut Criterion) {
    let cloud = sphere(20_000);
    let index = KdIndex::build(&cloud);
    let mut group = c.benchmark_group("knn");
    for k in [16, 64] {
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, &k| {
            let mut i = 0;
            b.iter(|| {
                i = (i + 7919) % cloud.len();
                index.knn(cloud.points()[i], k).unwrap()
            })
        });
    }
    group.finish();
}

fn baselines(c: &mut Criterion) {
    let cloud = sphere(5_000);
    let index = KdIndex::build(&cloud);
    let patch = extract_patch(&index, &cloud, 0, 64).unwrap();
    c.bench_function("pca_k64", |b| b.iter(|| pca_normal(&patch).unwrap()));
    c.bench_function("jet2_k64", |b| b.iter(|| jet2_normal(&patch).unwrap()));
}

fn network(c: &mut Criterion) {
    let cloud = sphere(5_000);
    let index = KdIndex::build(&cloud);
    let patch = extract_patch(&index, &cloud, 0, 64).unwrap();
    let model = AngleFieldModel::init(0);
    let queries = neaf_core::sample_sphere_uniform(400, 3).unwrap();
    let mut group = c.benchmark_group("network");
    group.sample_size(10);
    group.bench_function("forward_backward_400", |b| {
        b.iter(|| {
            let fwd = model.forward(&patch, &queries).unwrap();
            fwd.backward_params(&ndarray_ones(queries.len()))
        })
    });
    let cfg = InferConfig {
        m: 2000,
        ..InferConfig::default()
    };
    let est = NormalEstimator::new(&model, cfg).unwrap();
    group.bench_function("estimate_m2000", |b| b.iter(|| est.estimate(&patch).unwrap()));
    group.finish();
}

fn ndarray_ones(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

criterion_group!(benches, knn, baselines, network);
criterion_main!(benches);
