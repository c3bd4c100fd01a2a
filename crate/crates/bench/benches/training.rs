use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sigil_bench::sbm_graph;
use sigil_core::model::{ForwardOptions, ForwardValues};
use sigil_core::{ModelSpec, PreparedGraph, SigilModel, TrainConfig, TrainSession};

fn forward(c: &mut Criterion) {
    let g = sbm_graph(300, 16);
    let prepared = PreparedGraph::new(&g);
    let model = SigilModel::initialize(ModelSpec::new(300, vec![16, 16], 100, vec![3]), 0).unwrap();
    c.bench_function("forward/n300", |b| {
        b.iter(|| ForwardValues::compute(black_box(&model), &prepared, ForwardOptions::default()).unwrap())
    });
}

fn train_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_step");
    group.sample_size(20);
    for (name, pair_sample) in [("full", usize::MAX), ("p256", 256)] {
        for n in [300, 1000] {
            let g = sbm_graph(n, 16);
            let mut config = TrainConfig { clusters: vec![5], seed: 0, ..TrainConfig::default() };
            config.loss.pair_sample_size = pair_sample;
            let mut session = TrainSession::new(&g, config).unwrap();
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| b.iter(|| session.step().unwrap()));
        }
    }
    group.finish();
}

criterion_group!(benches, forward, train_step);
criterion_main!(benches);
