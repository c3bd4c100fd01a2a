//! Anomaly injection: clique (structural) and farthest-donor attribute copies.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SigilError};
use crate::graph::{AnomalyLabels, MultiViewGraph, View};
use crate::matrix::Csr;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionPlan {
    pub clique_size: usize,
    pub clique_count: usize,
    /// Candidates drawn per attribute anomaly; the farthest one is copied.
    pub attr_candidates: usize,
    pub attr_count: usize,
    pub seed: u64,
}

impl Default for InjectionPlan {
    fn default() -> Self {
        Self { clique_size: 15, clique_count: 0, attr_candidates: 50, attr_count: 0, seed: 0 }
    }
}

impl InjectionPlan {
    pub fn validate(&self) -> Result<()> {
        if self.clique_count > 0 && self.clique_size < 2 {
            return Err(SigilError::InvalidConfig(format!("clique size must be >= 2, got {}", self.clique_size)));
        }
        if self.attr_count > 0 && self.attr_candidates < 1 {
            return Err(SigilError::InvalidConfig("attribute candidate count k must be >= 1".into()));
        }
        Ok(())
    }

    /// Structural injection, then attribute injection on the remaining nodes.
    pub fn apply(&self, graph: &MultiViewGraph) -> Result<MultiViewGraph> {
        self.validate()?;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
        let (g, _) = inject_structural(graph, self.clique_size, self.clique_count, &mut rng)?;
        let (g, _) = inject_attribute(&g, self.attr_count, self.attr_candidates, &mut rng)?;
        Ok(g)
    }
}

fn existing_labels(graph: &MultiViewGraph) -> AnomalyLabels {
    graph.labels().cloned().unwrap_or_else(|| AnomalyLabels::empty(graph.n()))
}

/// `count` distinct nodes among those not yet labeled.
fn pick_unlabeled(labels: &AnomalyLabels, count: usize, what: &'static str, rng: &mut impl Rng) -> Result<Vec<usize>> {
    let free: Vec<usize> = (0..labels.len()).filter(|&i| !labels.is_anomaly(i)).collect();
    if count > free.len() {
        return Err(SigilError::InsufficientNodes { what, needed: count, available: free.len() });
    }
    Ok(sample(rng, free.len(), count).into_iter().map(|k| free[k]).collect())
}

/// Fully connects `clique_count` disjoint random sets of `m` unlabeled nodes in
/// every view. Returns the new graph and the injected cliques.
pub fn inject_structural(
    graph: &MultiViewGraph,
    m: usize,
    clique_count: usize,
    rng: &mut impl Rng,
) -> Result<(MultiViewGraph, Vec<Vec<usize>>)> {
    if clique_count == 0 {
        return Ok((graph.clone().with_labels(existing_labels(graph))?, Vec::new()));
    }
    if m < 2 {
        return Err(SigilError::InvalidConfig(format!("clique size must be >= 2, got {m}")));
    }
    let mut labels = existing_labels(graph);
    let chosen = pick_unlabeled(&labels, m * clique_count, "clique injection (clique_count * clique_size)", rng)?;
    let cliques: Vec<Vec<usize>> = chosen.chunks(m).map(|c| c.to_vec()).collect();
    let views = graph
        .views()
        .iter()
        .map(|view| {
            let mut trip: Vec<(usize, usize, f64)> = view.adjacency().triplets().collect();
            for c in &cliques {
                for (p, &i) in c.iter().enumerate() {
                    for &j in &c[p + 1..] {
                        if !view.adjacency().contains(i, j) {
                            trip.push((i, j, 1.0));
                            trip.push((j, i, 1.0));
                        }
                    }
                }
            }
            View::new(Csr::from_triplets(graph.n(), &trip), view.features().clone())
        })
        .collect::<Result<Vec<_>>>()?;
    for &i in &chosen {
        labels.mark(i);
    }
    Ok((MultiViewGraph::new(views, Some(labels))?, cliques))
}

/// Picks `count` unlabeled nodes and perturbs them with [`inject_attribute_at`].
pub fn inject_attribute(
    graph: &MultiViewGraph,
    count: usize,
    k: usize,
    rng: &mut impl Rng,
) -> Result<(MultiViewGraph, Vec<(usize, Vec<usize>)>)> {
    if count == 0 {
        return Ok((graph.clone().with_labels(existing_labels(graph))?, Vec::new()));
    }
    let labels = existing_labels(graph);
    let targets = pick_unlabeled(&labels, count, "attribute injection", rng)?;
    inject_attribute_at(graph, &targets, k, rng)
}

/// For every target `i`, draws `k` candidates from the non-target nodes and,
/// in each view, copies the features of the candidate farthest from `x_i`
/// (ties to the lower index). Returns the donors per target, one per view.
pub fn inject_attribute_at(
    graph: &MultiViewGraph,
    targets: &[usize],
    k: usize,
    rng: &mut impl Rng,
) -> Result<(MultiViewGraph, Vec<(usize, Vec<usize>)>)> {
    let n = graph.n();
    if k == 0 {
        return Err(SigilError::InvalidConfig("attribute candidate count k must be >= 1".into()));
    }
    let mut is_target = vec![false; n];
    for &t in targets {
        if t >= n || is_target[t] {
            return Err(SigilError::InvalidConfig(format!("invalid or repeated attribute target {t}")));
        }
        is_target[t] = true;
    }
    // Donors come from untouched nodes, so every copy reads original features.
    let pool: Vec<usize> = (0..n).filter(|&i| !is_target[i]).collect();
    if k > pool.len() {
        return Err(SigilError::InsufficientNodes { what: "attribute donor candidates (k)", needed: k, available: pool.len() });
    }
    let mut features: Vec<_> = graph.views().iter().map(|v| v.features().clone()).collect();
    let mut donors = Vec::with_capacity(targets.len());
    for &i in targets {
        let mut cand: Vec<usize> = sample(rng, pool.len(), k).into_iter().map(|p| pool[p]).collect();
        cand.sort_unstable();
        let mut per_view = Vec::with_capacity(features.len());
        for (a, view) in graph.views().iter().enumerate() {
            let x = view.features();
            let dist = |j: usize| x.row(i).iter().zip(x.row(j)).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
            let mut best = cand[0];
            let mut best_d = dist(best);
            for &j in &cand[1..] {
                let d = dist(j);
                if d > best_d {
                    best = j;
                    best_d = d;
                }
            }
            features[a].row_mut(i).copy_from_slice(x.row(best));
            per_view.push(best);
        }
        donors.push((i, per_view));
    }
    let mut labels = existing_labels(graph);
    for &i in targets {
        labels.mark(i);
    }
    let views = graph
        .views()
        .iter()
        .zip(features)
        .map(|(v, x)| View::new(Csr::clone(v.adjacency()), x))
        .collect::<Result<Vec<_>>>()?;
    Ok((MultiViewGraph::new(views, Some(labels))?, donors))
}
