//! Shared fixtures for the criterion benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sigil_core::benchmark::generate_synthetic;
use sigil_core::{Matrix, MultiViewGraph, SyntheticSpec};

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Two-view SBM graph with roughly constant expected degree 10.
pub fn sbm_graph(n: usize, feature_dim: usize) -> MultiViewGraph {
    let communities = 3;
    let block = n as f64 / communities as f64;
    generate_synthetic(&SyntheticSpec {
        n,
        communities,
        p_intra: (9.0 / block).min(1.0),
        p_inter: (1.0 / (n as f64 - block)).min(1.0),
        feature_dim,
        seed: 1,
        ..SyntheticSpec::default()
    })
    .expect("valid fixture spec")
}

/// Scores and labels with about 10% positives.
pub fn scored_labels(n: usize) -> (Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.1)).collect();
    let scores = labels.iter().map(|&l| rng.random::<f64>() + if l { 0.3 } else { 0.0 }).collect();
    (scores, labels)
}
