use alfamix_bench::fixture;
use alfamix_core::acquisition::{build_candidate_set, compute_anchors, optimal_alpha_closed_form};
use alfamix_core::{AcquisitionConfig, RngStream, SelectionContext, Strategy};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn closed_form(c: &mut Criterion) {
    let mut group = c.benchmark_group("closed_form_alpha");
    for d in [16, 128, 512] {
        let mut rng = RngStream::new(1);
        let mut v = || (0..d).map(|_| rng.standard_normal()).collect::<Vec<f64>>();
        let (zu, zs, g) = (v(), v(), v());
        group.bench_with_input(BenchmarkId::from_parameter(d), &d, |b, _| {
            b.iter(|| optimal_alpha_closed_form(black_box(&zu), black_box(&zs), black_box(&g), 0.05).unwrap())
        });
    }
    group.finish();
}

fn candidates(c: &mut Criterion) {
    let f = fixture(200, 4000, 64);
    let model = f.snapshot.params();
    let pool = model.encode_batch(&f.pool).unwrap();
    let anchors = compute_anchors(&model.encode_batch(&f.labelled).unwrap(), &f.labels, alfamix_bench::CLASSES).unwrap();
    let eps = AcquisitionConfig::default().epsilon_for(pool.cols());
    c.bench_function("candidate_set/4000x64", |b| {
        b.iter(|| build_candidate_set(black_box(&pool), &anchors, model, eps).unwrap())
    });
}

fn strategies(c: &mut Criterion) {
    let f = fixture(200, 2000, 64);
    let ctx = SelectionContext {
        snapshot: &f.snapshot,
        pool_inputs: &f.pool,
        labelled_inputs: &f.labelled,
        labelled_labels: &f.labels,
    };
    let cfg = AcquisitionConfig::default();
    let mut group = c.benchmark_group("select/2000");
    group.sample_size(10);
    for s in Strategy::ALL {
        group.bench_function(s.name(), |b| b.iter(|| s.select(&ctx, 100, &cfg, &mut RngStream::new(0)).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, closed_form, candidates, strategies);
criterion_main!(benches);
