//! Multi-view attributed graphs.
//!
//! Every view shares one node set. A view carries a symmetric sparse
//! adjacency and its own dense feature matrix; feature widths may differ.

pub mod bundle;
pub mod io;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SigilError};
use crate::matrix::{Csr, Matrix};

/// One view of the graph: adjacency `A^a`, features `X^a`, degrees `D^a`.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    adjacency: Arc<Csr>,
    features: Matrix,
    degree: Vec<f64>,
}

impl View {
    /// Validates and wraps a view. Self-loops are dropped.
    pub fn new(adjacency: Csr, features: Matrix) -> Result<Self> {
        let n = adjacency.n();
        if features.rows() != n {
            return Err(SigilError::InvalidConfig(format!(
                "feature matrix has {} rows but adjacency has {} nodes",
                features.rows(),
                n
            )));
        }
        if !features.all_finite() {
            return Err(SigilError::InvalidConfig("features contain non-finite values".into()));
        }
        let mut stripped = Vec::with_capacity(adjacency.nnz());
        for (i, j, w) in adjacency.triplets() {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(SigilError::InvalidConfig(format!("edge ({i}, {j}) has invalid weight {w}")));
            }
            if i != j {
                stripped.push((i, j, w));
            }
        }
        let adjacency = Csr::from_triplets(n, &stripped);
        if !adjacency.is_symmetric() {
            return Err(SigilError::InvalidConfig("adjacency is not symmetric".into()));
        }
        let degree = adjacency.row_sums();
        Ok(Self { adjacency: Arc::new(adjacency), features, degree })
    }

    pub fn adjacency(&self) -> &Arc<Csr> {
        &self.adjacency
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    pub fn n(&self) -> usize {
        self.adjacency.n()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Undirected edge count (each `{i, j}` counted once).
    pub fn edge_count(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub(crate) fn with_features(&self, features: Matrix) -> View {
        View { adjacency: Arc::clone(&self.adjacency), features, degree: self.degree.clone() }
    }
}

/// Per-node anomaly flags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnomalyLabels {
    flags: Vec<bool>,
    count: usize,
}

impl AnomalyLabels {
    pub fn new(flags: Vec<bool>) -> Self {
        let count = flags.iter().filter(|&&f| f).count();
        Self { flags, count }
    }

    pub fn empty(n: usize) -> Self {
        Self::new(vec![false; n])
    }

    pub fn from_indices(n: usize, indices: &[usize]) -> Result<Self> {
        let mut flags = vec![false; n];
        for &i in indices {
            if i >= n {
                return Err(SigilError::InvalidConfig(format!("label index {i} out of range for {n} nodes")));
            }
            flags[i] = true;
        }
        Ok(Self::new(flags))
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn is_anomaly(&self, i: usize) -> bool {
        self.flags[i]
    }

    pub fn indices(&self) -> Vec<usize> {
        self.flags.iter().enumerate().filter_map(|(i, &f)| f.then_some(i)).collect()
    }

    pub fn mark(&mut self, i: usize) {
        if !self.flags[i] {
            self.flags[i] = true;
            self.count += 1;
        }
    }
}

/// `G = (V, E^1..E^v, X^1..X^v)` with optional ground-truth labels.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiViewGraph {
    n: usize,
    views: Vec<View>,
    labels: Option<AnomalyLabels>,
}

impl MultiViewGraph {
    pub fn new(views: Vec<View>, labels: Option<AnomalyLabels>) -> Result<Self> {
        let Some(first) = views.first() else {
            return Err(SigilError::InvalidConfig("a graph needs at least one view".into()));
        };
        let n = first.n();
        if let Some(bad) = views.iter().position(|v| v.n() != n) {
            return Err(SigilError::InvalidConfig(format!(
                "view {bad} has {} nodes, view 0 has {n}",
                views[bad].n()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(SigilError::InvalidConfig(format!("{} labels for {n} nodes", l.len())));
            }
        }
        Ok(Self { n, views, labels })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn views(&self) -> &[View] {
        &self.views
    }

    pub fn view(&self, a: usize) -> &View {
        &self.views[a]
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn labels(&self) -> Option<&AnomalyLabels> {
        self.labels.as_ref()
    }

    pub fn feature_dims(&self) -> Vec<usize> {
        self.views.iter().map(View::feature_dim).collect()
    }

    pub fn with_labels(mut self, labels: AnomalyLabels) -> Result<Self> {
        if labels.len() != self.n {
            return Err(SigilError::InvalidConfig(format!("{} labels for {} nodes", labels.len(), self.n)));
        }
        self.labels = Some(labels);
        Ok(self)
    }
}

/// Builds `num_views` views from one: each copies the adjacency and zeroes
/// every feature entry independently with probability `mask_prob`.
pub fn synthesize_views(single_view: &View, num_views: usize, mask_prob: f64, seed: u64) -> Result<MultiViewGraph> {
    if !(0.0..1.0).contains(&mask_prob) {
        return Err(SigilError::InvalidConfig(format!("mask probability must be in [0, 1), got {mask_prob}")));
    }
    if num_views < 2 {
        return Err(SigilError::InvalidConfig(format!("need at least 2 views, got {num_views}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let views = (0..num_views)
        .map(|_| {
            let mut x = single_view.features().clone();
            if mask_prob > 0.0 {
                for v in x.as_mut_slice() {
                    if rng.random_bool(mask_prob) {
                        *v = 0.0;
                    }
                }
            }
            single_view.with_features(x)
        })
        .collect();
    MultiViewGraph::new(views, None)
}
