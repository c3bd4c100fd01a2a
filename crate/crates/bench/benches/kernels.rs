use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sigil_bench::{random_matrix, sbm_graph, scored_labels};
use sigil_core::benchmark::auc;
use sigil_core::losses::build_similarity_map;
use sigil_core::matrix::gemm;
use sigil_core::{Matrix, Normalization};

fn dense(c: &mut Criterion) {
    let mut group = c.benchmark_group("gemm");
    for n in [64, 256] {
        let a = random_matrix(n, n, 1);
        let b = random_matrix(n, n, 2);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bch, _| {
            bch.iter(|| gemm(black_box(&a), false, black_box(&b), true))
        });
    }
    group.finish();
}

fn sparse(c: &mut Criterion) {
    let g = sbm_graph(2000, 64);
    let a = g.view(0).adjacency().gcn_normalized();
    let x = g.view(0).features().clone();
    c.bench_function("spmm/n2000_d64", |b| b.iter(|| a.matmul_dense(black_box(&x))));
}

fn similarity(c: &mut Criterion) {
    let mut group = c.benchmark_group("similarity_map");
    for n in [250, 1000] {
        let g = sbm_graph(n, 8);
        let adj: Vec<_> = g.views().iter().map(|v| Arc::clone(v.adjacency())).collect();
        let logits = random_matrix(n, 5, 3);
        let m = Matrix::from_fn(n, 5, |i, j| logits.get(i, j).exp());
        let m = Matrix::from_fn(n, 5, |i, j| m.get(i, j) / m.row(i).iter().sum::<f64>());
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| build_similarity_map(black_box(&m), &adj, 0.9, Normalization::Symmetric).unwrap())
        });
    }
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let (scores, labels) = scored_labels(100_000);
    c.bench_function("auc/n100k", |b| b.iter(|| auc(black_box(&scores), &labels).unwrap()));
}

criterion_group!(benches, dense, sparse, similarity, metrics);
criterion_main!(benches);
