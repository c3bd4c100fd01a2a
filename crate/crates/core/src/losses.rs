//! Training losses: L2,1 reconstruction, the similarity map and the
//! similarity-guided contrastive loss, the ablation variants, and the
//! align/uniform decomposition.

use std::collections::HashMap;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Result, SigilError};
use crate::matrix::{gemm, Csr, Matrix};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `D^-1/2 K D^-1/2`.
    #[default]
    Symmetric,
    /// `D^-1 K`, rows sum to one.
    Row,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// `||O - Z Z^T / tau||_F^2`.
    #[default]
    SimilarityGuided,
    /// Hard-cluster contrastive loss on argmax clusters of `M`.
    ClusteringL1,
    /// `||M M^T - Z Z^T / tau||_F^2`, no adjacency, no normalization.
    PlainL2,
    /// Reconstruction only.
    None,
}

impl FromStr for Normalization {
    type Err = SigilError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" | "sym" => Ok(Self::Symmetric),
            "row" => Ok(Self::Row),
            _ => Err(SigilError::InvalidConfig(format!("unknown normalization `{s}` (symmetric|row)"))),
        }
    }
}

impl std::fmt::Display for Normalization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Symmetric => "symmetric",
            Self::Row => "row",
        })
    }
}

impl FromStr for LossVariant {
    type Err = SigilError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "similarity_guided" => Ok(Self::SimilarityGuided),
            "clustering_l1" => Ok(Self::ClusteringL1),
            "plain_l2" => Ok(Self::PlainL2),
            "none" => Ok(Self::None),
            _ => Err(SigilError::InvalidConfig(format!(
                "unknown loss variant `{s}` (similarity_guided|clustering_l1|plain_l2|none)"
            ))),
        }
    }
}

impl std::fmt::Display for LossVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::SimilarityGuided => "similarity_guided",
            Self::ClusteringL1 => "clustering_l1",
            Self::PlainL2 => "plain_l2",
            Self::None => "none",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub tau: f64,
    /// Nodes sampled per iteration for the contrastive term, capped at `n`.
    pub pair_sample_size: usize,
    pub variant: LossVariant,
    pub normalization: Normalization,
    /// Let gradients flow through the similarity map. Off by default: the map
    /// is rebuilt from the current `M` every iteration but held constant.
    pub differentiable_map: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            alpha: 0.9,
            tau: 1.0,
            pair_sample_size: 512,
            variant: LossVariant::SimilarityGuided,
            normalization: Normalization::Symmetric,
            differentiable_map: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SigilError::InvalidConfig(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be > 0, got {}", self.tau));
        }
        if self.pair_sample_size < 2 {
            return bad(format!("pair sample size must be >= 2, got {}", self.pair_sample_size));
        }
        Ok(())
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(SigilError::InvalidConfig(format!("tau must be > 0, got {tau}")))
    }
}

/// `sum_a (sum_i ||x_i^a - xhat_i^a||_2)^2`.
pub fn reconstruction_loss(tape: &mut Tape, x: &[Var], x_hat: &[Var]) -> Result<Var> {
    if x.len() != x_hat.len() || x.is_empty() {
        return Err(SigilError::ShapeMismatch { op: "reconstruction_loss", left: (x.len(), 0), right: (x_hat.len(), 0) });
    }
    let mut total: Option<Var> = None;
    for (&xa, &ha) in x.iter().zip(x_hat) {
        let diff = tape.sub(xa, ha)?;
        let norms = tape.row_l2_norm(diff)?;
        let l21 = tape.sum(norms)?;
        let sq = tape.mul(l21, l21)?;
        total = Some(match total {
            None => sq,
            Some(t) => tape.add(t, sq)?,
        });
    }
    Ok(total.expect("at least one view"))
}

/// Row-normalized sum of the per-view fine embeddings.
pub fn aggregate_embeddings(tape: &mut Tape, z: &[Var]) -> Result<Var> {
    let mut acc = z[0];
    for &v in &z[1..] {
        acc = tape.add(acc, v)?;
    }
    tape.row_normalize(acc)
}

/// Normalized similarity map with its degree vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMap {
    pub o: Matrix,
    pub degree: Vec<f64>,
    pub alpha: f64,
    pub normalization: Normalization,
}

/// Row sums of `K = alpha M M^T + (1 - alpha) (1/v) sum_a A^a` without forming `K`.
pub fn similarity_degree(m: &Matrix, adjacencies: &[Arc<Csr>], alpha: f64) -> Result<Vec<f64>> {
    let col_sums: Vec<f64> = (0..m.cols()).map(|c| (0..m.rows()).map(|r| m.get(r, c)).sum()).collect();
    let mut adj_deg = vec![0.0; m.rows()];
    for a in adjacencies {
        for (d, s) in adj_deg.iter_mut().zip(a.row_sums()) {
            *d += s;
        }
    }
    let v = adjacencies.len().max(1) as f64;
    let mut degree = Vec::with_capacity(m.rows());
    for (i, &ad) in adj_deg.iter().enumerate() {
        let mm: f64 = m.row(i).iter().zip(&col_sums).map(|(x, y)| x * y).sum();
        let d = alpha * mm + (1.0 - alpha) * ad / v;
        if !(d > 0.0) {
            return Err(SigilError::ZeroDegree { node: i });
        }
        degree.push(d);
    }
    Ok(degree)
}

/// Dense `(1/v) sum_a A^a` restricted to rows/columns `idx`.
fn mean_adjacency_block(adjacencies: &[Arc<Csr>], idx: &[usize]) -> Matrix {
    let pos: HashMap<usize, usize> = idx.iter().enumerate().map(|(p, &i)| (i, p)).collect();
    let mut out = Matrix::zeros(idx.len(), idx.len());
    let v = adjacencies.len().max(1) as f64;
    for a in adjacencies {
        for (p, &i) in idx.iter().enumerate() {
            for (j, w) in a.row(i) {
                if let Some(&q) = pos.get(&j) {
                    out.set(p, q, out.get(p, q) + w / v);
                }
            }
        }
    }
    out
}

/// Builds the full `n x n` similarity map.
pub fn build_similarity_map(
    m: &Matrix,
    adjacencies: &[Arc<Csr>],
    alpha: f64,
    normalization: Normalization,
) -> Result<SimilarityMap> {
    let degree = similarity_degree(m, adjacencies, alpha)?;
    let all: Vec<usize> = (0..m.rows()).collect();
    let mut k = gemm(m, false, m, true).scale(alpha);
    k.add_assign(&mean_adjacency_block(adjacencies, &all).scale(1.0 - alpha));
    let n = m.rows();
    let o = match normalization {
        Normalization::Symmetric => {
            let s: Vec<f64> = degree.iter().map(|d| d.powf(-0.5)).collect();
            Matrix::from_fn(n, n, |i, j| s[i] * k.get(i, j) * s[j])
        }
        Normalization::Row => Matrix::from_fn(n, n, |i, j| k.get(i, j) / degree[i]),
    };
    Ok(SimilarityMap { o, degree, alpha, normalization })
}

/// The similarity map restricted to `sample` (all nodes if `None`), recorded
/// on the tape as a function of `m`. Pass a detached `m` to hold it constant.
/// The degree normalizer always uses every node.
pub fn similarity_map_on_tape(
    tape: &mut Tape,
    m: Var,
    adjacencies: &[Arc<Csr>],
    alpha: f64,
    normalization: Normalization,
    sample: Option<&Arc<Vec<usize>>>,
) -> Result<Var> {
    let n = tape.shape(m).0;
    // Validate positivity up front so the failure names the node.
    similarity_degree(tape.value(m), adjacencies, alpha)?;

    let mut adj_deg = vec![0.0; n];
    for a in adjacencies {
        for (d, s) in adj_deg.iter_mut().zip(a.row_sums()) {
            *d += s;
        }
    }
    let v = adjacencies.len().max(1) as f64;
    let adj_deg = Matrix::from_vec(n, 1, adj_deg.into_iter().map(|d| (1.0 - alpha) * d / v).collect());

    let mt = tape.transpose(m)?;
    let col_sums = tape.sum_rows(mt)?;
    let mm_deg = tape.matmul(m, col_sums)?;
    let mm_deg = tape.scalar_mul(mm_deg, alpha)?;
    let adj_deg = tape.constant(adj_deg);
    let degree = tape.add(mm_deg, adj_deg)?;

    let all;
    let idx = match sample {
        Some(s) => s,
        None => {
            all = Arc::new((0..n).collect::<Vec<_>>());
            &all
        }
    };
    let (m_s, degree_s) = if sample.is_some() {
        (tape.select_rows(m, Arc::clone(idx))?, tape.select_rows(degree, Arc::clone(idx))?)
    } else {
        (m, degree)
    };
    let m_st = tape.transpose(m_s)?;
    let mm = tape.matmul(m_s, m_st)?;
    let mm = tape.scalar_mul(mm, alpha)?;
    let adj_block = tape.constant(mean_adjacency_block(adjacencies, idx).scale(1.0 - alpha));
    let k = tape.add(mm, adj_block)?;
    match normalization {
        Normalization::Symmetric => {
            let s = tape.powf(degree_s, -0.5)?;
            let s_row = tape.transpose(s)?;
            let left = tape.mul_rows_by(k, s)?;
            tape.mul_cols_by(left, s_row)
        }
        Normalization::Row => {
            let inv = tape.powf(degree_s, -1.0)?;
            tape.mul_rows_by(k, inv)
        }
    }
}

/// `||O - Z Z^T / tau||_F^2`; `o` and `z_hat` already restricted to the same nodes.
pub fn similarity_guided_loss(tape: &mut Tape, o: Var, z_hat: Var, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let zt = tape.transpose(z_hat)?;
    let gram = tape.matmul(z_hat, zt)?;
    let gram = tape.scalar_mul(gram, 1.0 / tau)?;
    let diff = tape.sub(o, gram)?;
    tape.frobenius_sq(diff)
}

/// `||M M^T - Z Z^T / tau||_F^2`.
pub fn plain_l2_loss(tape: &mut Tape, m: Var, z_hat: Var, tau: f64) -> Result<Var> {
    let mt = tape.transpose(m)?;
    let mm = tape.matmul(m, mt)?;
    similarity_guided_loss(tape, mm, z_hat, tau)
}

/// Argmax cluster of every row, ties to the lowest index.
pub fn hard_clusters(m: &Matrix) -> Vec<usize> {
    m.row_argmax()
}

/// `-sum_i sum_{j in C(i), j != i} log(s_ij / (s_ij + sum_{k not in C(i)} s_ik))`
/// with `s_ij = exp(z_i . z_j / tau)`.
pub fn clustering_contrastive_loss(tape: &mut Tape, z_hat: Var, clusters: &[usize], tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let n = tape.shape(z_hat).0;
    if clusters.len() != n {
        return Err(SigilError::ShapeMismatch { op: "clustering_contrastive_loss", left: (n, 1), right: (clusters.len(), 1) });
    }
    if clusters.iter().all(|&c| c == clusters[0]) {
        return Err(SigilError::SingleCluster);
    }
    let pos = Matrix::from_fn(n, n, |i, j| f64::from(i != j && clusters[i] == clusters[j]));
    let neg = Matrix::from_fn(n, n, |i, j| f64::from(clusters[i] != clusters[j]));
    let zt = tape.transpose(z_hat)?;
    let logits = tape.matmul(z_hat, zt)?;
    let logits = tape.scalar_mul(logits, 1.0 / tau)?;
    let sims = tape.exp(logits)?;
    let neg = tape.constant(neg);
    let neg_sims = tape.mul(sims, neg)?;
    let neg_sum = tape.sum_rows(neg_sims)?;
    let denom = tape.add_col_broadcast(sims, neg_sum)?;
    let log_denom = tape.ln(denom)?;
    let log_ratio = tape.sub(logits, log_denom)?;
    let pos = tape.constant(pos);
    let masked = tape.mul(log_ratio, pos)?;
    let total = tape.sum(masked)?;
    tape.scalar_mul(total, -1.0)
}

/// `(align, uniform)` with `align = -sum_ij 2 o_ij z_i.z_j / tau` and
/// `uniform = sum_ij log(prod_k exp((z_i.z_k / tau)^2))^(1/n)`, so that
/// `align + uniform` is the contrastive form of the similarity-guided loss.
pub fn align_uniform_decomposition(o: &Matrix, z_hat: &Matrix, tau: f64) -> Result<(f64, f64)> {
    check_tau(tau)?;
    let n = z_hat.rows();
    if o.shape() != (n, n) {
        return Err(SigilError::ShapeMismatch { op: "align_uniform_decomposition", left: o.shape(), right: (n, n) });
    }
    let gram = gemm(z_hat, false, z_hat, true).scale(1.0 / tau);
    let align = -2.0 * o.as_slice().iter().zip(gram.as_slice()).map(|(a, b)| a * b).sum::<f64>();
    let mut uniform = 0.0;
    for i in 0..n {
        // log of the geometric mean over k, repeated for each of the n values of j
        let log_geo: f64 = gram.row(i).iter().map(|g| g * g).sum::<f64>() / n as f64;
        uniform += n as f64 * log_geo;
    }
    Ok((align, uniform))
}

/// `J = L_r + lambda L_c`.
pub fn total_objective(tape: &mut Tape, l_r: Var, l_c: Var, lambda: f64) -> Result<Var> {
    let weighted = tape.scalar_mul(l_c, lambda)?;
    tape.add(l_r, weighted)
}

/// `p` distinct node indices drawn uniformly, sorted ascending.
pub fn sample_nodes(n: usize, p: usize, rng: &mut impl Rng) -> Arc<Vec<usize>> {
    let mut idx = rand::seq::index::sample(rng, n, p.min(n)).into_vec();
    idx.sort_unstable();
    Arc::new(idx)
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub reconstruction: Var,
    /// Unweighted contrastive term; absent for the `none` variant.
    pub contrastive: Option<Var>,
    pub objective: Var,
}

/// Assembles the training objective on the tape.
///
/// `sample` restricts the contrastive term to a node subset; `None` uses every node.
#[allow(clippy::too_many_arguments)]
pub fn objective(
    tape: &mut Tape,
    config: &LossConfig,
    features: &[Var],
    reconstructions: &[Var],
    fine_embeddings: &[Var],
    composed: Var,
    adjacencies: &[Arc<Csr>],
    sample: Option<&Arc<Vec<usize>>>,
) -> Result<LossTerms> {
    let l_r = reconstruction_loss(tape, features, reconstructions)?;
    if config.variant == LossVariant::None {
        return Ok(LossTerms { reconstruction: l_r, contrastive: None, objective: l_r });
    }
    let z_hat = aggregate_embeddings(tape, fine_embeddings)?;
    let z_s = match sample {
        Some(idx) => tape.select_rows(z_hat, Arc::clone(idx))?,
        None => z_hat,
    };
    let l_c = match config.variant {
        LossVariant::SimilarityGuided => {
            let m = if config.differentiable_map { composed } else { tape.detach(composed) };
            let o = similarity_map_on_tape(tape, m, adjacencies, config.alpha, config.normalization, sample)?;
            similarity_guided_loss(tape, o, z_s, config.tau)?
        }
        LossVariant::PlainL2 => {
            let m_s = match sample {
                Some(idx) => tape.select_rows(composed, Arc::clone(idx))?,
                None => composed,
            };
            let m_s = if config.differentiable_map { m_s } else { tape.detach(m_s) };
            plain_l2_loss(tape, m_s, z_s, config.tau)?
        }
        LossVariant::ClusteringL1 => {
            let clusters = hard_clusters(tape.value(composed));
            let clusters: Vec<usize> = match sample {
                Some(idx) => idx.iter().map(|&i| clusters[i]).collect(),
                None => clusters,
            };
            if clusters.iter().all(|&c| c == clusters[0]) {
                // Every sampled node in one cluster: no negatives, nothing to contrast.
                tape.constant(Matrix::scalar(0.0))
            } else {
                clustering_contrastive_loss(tape, z_s, &clusters, config.tau)?
            }
        }
        LossVariant::None => unreachable!(),
    };
    let j = total_objective(tape, l_r, l_c, config.lambda)?;
    Ok(LossTerms { reconstruction: l_r, contrastive: Some(l_c), objective: j })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn unit_rows(m: &Matrix) -> Matrix {
        let mut out = m.clone();
        for i in 0..out.rows() {
            let n = out.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            out.row_mut(i).iter_mut().for_each(|v| *v /= n);
        }
        out
    }

    fn stochastic(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        let mut m = Matrix::from_fn(r, c, |_, _| rng.random_range(0.01..1.0));
        for i in 0..r {
            let s: f64 = m.row(i).iter().sum();
            m.row_mut(i).iter_mut().for_each(|v| *v /= s);
        }
        m
    }

    fn random_adj(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Arc<Csr> {
        let mut t = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random_bool(p) {
                    t.push((i, j, 1.0));
                    t.push((j, i, 1.0));
                }
            }
        }
        Arc::new(Csr::from_triplets(n, &t))
    }

    fn scalar(tape: &Tape, v: Var) -> f64 {
        tape.value(v).item()
    }

    #[test]
    fn reconstruction_loss_hand_values() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::from_rows(&[vec![3.0, 4.0], vec![1.0, 1.0]]));
        let h = tape.constant(Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]));
        let l = reconstruction_loss(&mut tape, &[x], &[h]).unwrap();
        assert_eq!(scalar(&tape, l), 25.0);
        let same = reconstruction_loss(&mut tape, &[x], &[x]).unwrap();
        assert_eq!(scalar(&tape, same), 0.0);
        let h2 = tape.constant(Matrix::from_rows(&[vec![-3.0, -4.0], vec![1.0, 1.0]]));
        let bigger = reconstruction_loss(&mut tape, &[x], &[h2]).unwrap();
        assert!(scalar(&tape, bigger) > 25.0);
    }

    #[test]
    fn reconstruction_loss_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 4..=10 {
            let xs: Vec<Matrix> = (0..2).map(|_| rand_matrix(&mut rng, n, 3)).collect();
            let hs: Vec<Matrix> = (0..2).map(|_| rand_matrix(&mut rng, n, 3)).collect();
            let mut expected = 0.0;
            for (x, h) in xs.iter().zip(&hs) {
                let mut s = 0.0;
                for i in 0..n {
                    s += x.row(i).iter().zip(h.row(i)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                }
                expected += s * s;
            }
            let mut tape = Tape::new();
            let xv: Vec<Var> = xs.into_iter().map(|m| tape.constant(m)).collect();
            let hv: Vec<Var> = hs.into_iter().map(|m| tape.constant(m)).collect();
            let l = reconstruction_loss(&mut tape, &xv, &hv).unwrap();
            assert!((scalar(&tape, l) - expected).abs() <= 1e-9 * expected.max(1.0));
        }
    }

    #[test]
    fn one_hot_assignment_gives_block_constant_row_map() {
        let m = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        ]);
        let adj = Arc::new(Csr::empty(5));
        let map = build_similarity_map(&m, &[adj], 1.0, Normalization::Row).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let expected = match (i < 2, j < 2) {
                    (true, true) => 0.5,
                    (false, false) => 1.0 / 3.0,
                    _ => 0.0,
                };
                assert!((map.o.get(i, j) - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn alpha_zero_gives_normalized_adjacency() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let adj = Csr::from_triplets(3, &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)]);
        let m = stochastic(&mut rng, 3, 2);
        let map = build_similarity_map(&m, &[Arc::new(adj.clone())], 0.0, Normalization::Symmetric).unwrap();
        let d = adj.row_sums();
        for i in 0..3 {
            for j in 0..3 {
                let expected = adj.get(i, j) / (d[i] * d[j]).sqrt();
                assert!((map.o.get(i, j) - expected).abs() < 1e-15);
            }
        }
        assert_eq!(map.degree, d);
    }

    #[test]
    fn isolated_node_without_assignment_mass_is_named() {
        let m = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]]);
        let adj = Arc::new(Csr::from_triplets(3, &[(0, 1, 1.0), (1, 0, 1.0)]));
        let err = build_similarity_map(&m, &[adj], 0.0, Normalization::Row).unwrap_err();
        assert!(matches!(err, SigilError::ZeroDegree { node: 2 }));
    }

    #[test]
    fn map_modes_have_their_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = stochastic(&mut rng, 12, 3);
        let adjs = vec![random_adj(&mut rng, 12, 0.3), random_adj(&mut rng, 12, 0.3)];
        let row = build_similarity_map(&m, &adjs, 0.7, Normalization::Row).unwrap();
        for s in row.o.row_sums() {
            assert!((s - 1.0).abs() < 1e-10);
        }
        assert!(row.o.as_slice().iter().all(|&x| (0.0..=1.0).contains(&x)));
        let sym = build_similarity_map(&m, &adjs, 0.7, Normalization::Symmetric).unwrap();
        assert!(sym.o.asymmetry() < 1e-15);
    }

    #[test]
    fn tape_map_matches_dense_map_full_and_sampled() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = stochastic(&mut rng, 15, 4);
        let adjs = vec![random_adj(&mut rng, 15, 0.3), random_adj(&mut rng, 15, 0.2)];
        for norm in [Normalization::Symmetric, Normalization::Row] {
            let dense = build_similarity_map(&m, &adjs, 0.6, norm).unwrap();
            let mut tape = Tape::new();
            let mv = tape.constant(m.clone());
            let full = similarity_map_on_tape(&mut tape, mv, &adjs, 0.6, norm, None).unwrap();
            for (a, b) in tape.value(full).as_slice().iter().zip(dense.o.as_slice()) {
                assert!((a - b).abs() < 1e-14);
            }
            let idx = Arc::new(vec![1, 4, 5, 11]);
            let part = similarity_map_on_tape(&mut tape, mv, &adjs, 0.6, norm, Some(&idx)).unwrap();
            for (a, b) in tape.value(part).as_slice().iter().zip(dense.o.principal_submatrix(&idx).as_slice()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn similarity_loss_hand_values() {
        let mut tape = Tape::new();
        let o = tape.constant(Matrix::identity(3));
        let ortho = tape.constant(Matrix::identity(3));
        let l = similarity_guided_loss(&mut tape, o, ortho, 1.0).unwrap();
        assert_eq!(scalar(&tape, l), 0.0);
        let equal = tape.constant(Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]]));
        let l = similarity_guided_loss(&mut tape, o, equal, 1.0).unwrap();
        assert_eq!(scalar(&tape, l), 6.0);
        assert!(similarity_guided_loss(&mut tape, o, equal, 0.0).is_err());
        assert!(similarity_guided_loss(&mut tape, o, equal, -1.0).is_err());
    }

    #[test]
    fn full_sample_equals_unsampled_loss_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10;
        let m = stochastic(&mut rng, n, 3);
        let adjs = vec![random_adj(&mut rng, n, 0.3)];
        let z = unit_rows(&rand_matrix(&mut rng, n, 4));
        let mut tape = Tape::new();
        let mv = tape.constant(m);
        let zv = tape.constant(z);
        let o_full = similarity_map_on_tape(&mut tape, mv, &adjs, 0.9, Normalization::Symmetric, None).unwrap();
        let full = similarity_guided_loss(&mut tape, o_full, zv, 1.0).unwrap();
        let idx = sample_nodes(n, n, &mut rng);
        assert_eq!(*idx, (0..n).collect::<Vec<_>>());
        let o_s = similarity_map_on_tape(&mut tape, mv, &adjs, 0.9, Normalization::Symmetric, Some(&idx)).unwrap();
        let z_s = tape.select_rows(zv, Arc::clone(&idx)).unwrap();
        let sampled = similarity_guided_loss(&mut tape, o_s, z_s, 1.0).unwrap();
        assert_eq!(scalar(&tape, full).to_bits(), scalar(&tape, sampled).to_bits());
    }

    #[test]
    fn sampled_loss_is_unbiased_for_scaled_full_loss() {
        let (n, p, draws) = (30, 10, 10_000);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = stochastic(&mut rng, n, 4);
        let adjs = vec![random_adj(&mut rng, n, 0.2)];
        let map = build_similarity_map(&m, &adjs, 0.9, Normalization::Symmetric).unwrap();
        let z = unit_rows(&rand_matrix(&mut rng, n, 5));
        let gram = gemm(&z, false, &z, true);
        let e = map.o.zip_map(&gram, |a, b| (a - b) * (a - b));
        let diag: f64 = (0..n).map(|i| e.get(i, i)).sum();
        let off = e.sum() - diag;
        let expected = off * (p * (p - 1)) as f64 / (n * (n - 1)) as f64 + diag * p as f64 / n as f64;

        let mut samples = Vec::with_capacity(draws);
        for _ in 0..draws {
            let idx = sample_nodes(n, p, &mut rng);
            samples.push(e.principal_submatrix(&idx).sum());
        }
        let mean = samples.iter().sum::<f64>() / draws as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        assert!((mean - expected).abs() < 3.0 * se, "mean {mean} expected {expected} se {se}");

        // The loss function on the sampled block agrees with the direct sum.
        let idx = sample_nodes(n, p, &mut rng);
        let mut tape = Tape::new();
        let o = tape.constant(map.o.principal_submatrix(&idx));
        let zs = tape.constant(z.select_rows(&idx));
        let l = similarity_guided_loss(&mut tape, o, zs, 1.0).unwrap();
        assert!((scalar(&tape, l) - e.principal_submatrix(&idx).sum()).abs() < 1e-12);
    }

    fn brute_l1(z: &Matrix, clusters: &[usize], tau: f64) -> f64 {
        let n = z.rows();
        let sim = |i: usize, j: usize| (z.row(i).iter().zip(z.row(j)).map(|(a, b)| a * b).sum::<f64>() / tau).exp();
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                if j == i || clusters[j] != clusters[i] {
                    continue;
                }
                let negs: f64 = (0..n).filter(|&k| clusters[k] != clusters[i]).map(|k| sim(i, k)).sum();
                total -= (sim(i, j) / (sim(i, j) + negs)).ln();
            }
        }
        total
    }

    #[test]
    fn clustering_loss_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 4..=10 {
            let z = unit_rows(&rand_matrix(&mut rng, n, 3));
            let clusters: Vec<usize> = (0..n).map(|i| i % 3).collect();
            for tau in [0.5, 1.0, 2.0] {
                let mut tape = Tape::new();
                let zv = tape.constant(z.clone());
                let l = clustering_contrastive_loss(&mut tape, zv, &clusters, tau).unwrap();
                let expected = brute_l1(&z, &clusters, tau);
                assert!((scalar(&tape, l) - expected).abs() < 1e-9, "{} vs {expected}", scalar(&tape, l));
            }
        }
        let z = unit_rows(&rand_matrix(&mut rng, 4, 2));
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let l = clustering_contrastive_loss(&mut tape, zv, &[0, 0, 1, 1], 1.0).unwrap();
        assert!((scalar(&tape, l) - brute_l1(&z, &[0, 0, 1, 1], 1.0)).abs() < 1e-9);
    }

    #[test]
    fn clustering_loss_permutation_and_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = unit_rows(&rand_matrix(&mut rng, 6, 3));
        let clusters = vec![0, 1, 0, 1, 1, 2];
        let perm = [5, 3, 0, 1, 4, 2];
        let zp = z.select_rows(&perm);
        let cp: Vec<usize> = perm.iter().map(|&i| clusters[i]).collect();
        let mut tape = Tape::new();
        let a = tape.constant(z.clone());
        let b = tape.constant(zp);
        let la = clustering_contrastive_loss(&mut tape, a, &clusters, 1.0).unwrap();
        let lb = clustering_contrastive_loss(&mut tape, b, &cp, 1.0).unwrap();
        assert!((scalar(&tape, la) - scalar(&tape, lb)).abs() < 1e-12);

        // Large tau: every sim -> 1, each positive pair contributes log(1 + #negatives).
        let big = clustering_contrastive_loss(&mut tape, a, &clusters, 1e9).unwrap();
        let mut limit = 0.0;
        for i in 0..6 {
            let negs = clusters.iter().filter(|&&c| c != clusters[i]).count() as f64;
            let pos = clusters.iter().filter(|&&c| c == clusters[i]).count() - 1;
            limit += pos as f64 * (1.0 + negs).ln();
        }
        assert!((scalar(&tape, big) - limit).abs() < 1e-6);

        assert!(matches!(clustering_contrastive_loss(&mut tape, a, &[1; 6], 1.0), Err(SigilError::SingleCluster)));
    }

    #[test]
    fn align_uniform_zero_embedding_and_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let o = stochastic(&mut rng, 5, 5);
        assert_eq!(align_uniform_decomposition(&o, &Matrix::zeros(5, 3), 1.0).unwrap(), (0.0, 0.0));
        let z = unit_rows(&rand_matrix(&mut rng, 5, 3));
        let (a1, u1) = align_uniform_decomposition(&o, &z, 1.0).unwrap();
        let (a3, u3) = align_uniform_decomposition(&o.scale(3.0), &z, 1.0).unwrap();
        assert!((a3 - 3.0 * a1).abs() < 1e-12);
        assert_eq!(u1, u3);
    }

    #[test]
    fn decomposition_differs_from_loss_by_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 20;
        let m = stochastic(&mut rng, n, 4);
        let map = build_similarity_map(&m, &[random_adj(&mut rng, n, 0.2)], 0.9, Normalization::Symmetric).unwrap();
        let sum_o_sq = map.o.frobenius_sq();
        for _ in 0..5 {
            let z = unit_rows(&rand_matrix(&mut rng, n, 6));
            let mut tape = Tape::new();
            let o = tape.constant(map.o.clone());
            let zv = tape.constant(z.clone());
            let l = similarity_guided_loss(&mut tape, o, zv, 1.0).unwrap();
            let (a, u) = align_uniform_decomposition(&map.o, &z, 1.0).unwrap();
            assert!((scalar(&tape, l) - (a + u) - sum_o_sq).abs() < 1e-9);
        }
    }

    #[test]
    fn total_objective_arithmetic() {
        let mut tape = Tape::new();
        let lr = tape.constant(Matrix::scalar(2.0));
        let lc = tape.constant(Matrix::scalar(0.3));
        let j = total_objective(&mut tape, lr, lc, 10.0).unwrap();
        assert!((scalar(&tape, j) - 5.0).abs() < 1e-15);
        let j0 = total_objective(&mut tape, lr, lc, 0.0).unwrap();
        assert_eq!(scalar(&tape, j0), 2.0);
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        for bad in [
            LossConfig { tau: 0.0, ..Default::default() },
            LossConfig { alpha: 1.5, ..Default::default() },
            LossConfig { lambda: -1.0, ..Default::default() },
            LossConfig { pair_sample_size: 1, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
        assert_eq!("row".parse::<Normalization>().unwrap(), Normalization::Row);
        assert_eq!("clustering_l1".parse::<LossVariant>().unwrap(), LossVariant::ClusteringL1);
        assert!("bogus".parse::<LossVariant>().is_err());
    }

    fn fd_check(build: impl Fn(&mut Tape, Var) -> Var, x0: &Matrix) {
        let mut tape = Tape::new();
        let x = tape.param(x0.clone());
        let loss = build(&mut tape, x);
        let g = tape.backward(loss).unwrap().get(x);
        let h = 1e-5;
        for k in 0..x0.len() {
            let eval = |delta: f64| {
                let mut xp = x0.clone();
                xp.as_mut_slice()[k] += delta;
                let mut t = Tape::new();
                let v = t.param(xp);
                let l = build(&mut t, v);
                t.value(l).item()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let an = g.as_slice()[k];
            let err = (fd - an).abs();
            assert!(err <= 1e-7 || err / fd.abs().max(an.abs()) < 1e-4, "entry {k}: fd {fd} analytic {an}");
        }
    }

    #[test]
    fn gradients_match_finite_differences_on_20_nodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 20;
        let z0 = rand_matrix(&mut rng, n, 4);
        let m0 = stochastic(&mut rng, n, 3);
        let adjs = vec![random_adj(&mut rng, n, 0.2), random_adj(&mut rng, n, 0.2)];
        let map = build_similarity_map(&m0, &adjs, 0.9, Normalization::Symmetric).unwrap();
        let clusters = hard_clusters(&m0);

        fd_check(
            |t, z| {
                let zn = t.row_normalize(z).unwrap();
                let o = t.constant(map.o.clone());
                similarity_guided_loss(t, o, zn, 1.0).unwrap()
            },
            &z0,
        );
        fd_check(
            |t, z| {
                let zn = t.row_normalize(z).unwrap();
                let m = t.constant(m0.clone());
                plain_l2_loss(t, m, zn, 0.7).unwrap()
            },
            &z0,
        );
        fd_check(
            |t, z| {
                let zn = t.row_normalize(z).unwrap();
                clustering_contrastive_loss(t, zn, &clusters, 1.0).unwrap()
            },
            &z0,
        );
        fd_check(
            |t, z| {
                let x = t.constant(Matrix::from_fn(n, 4, |i, j| (i + j) as f64 * 0.1));
                reconstruction_loss(t, &[x], &[z]).unwrap()
            },
            &z0,
        );
        // The map itself, differentiated through M.
        for norm in [Normalization::Symmetric, Normalization::Row] {
            let zc = unit_rows(&z0);
            fd_check(
                |t, m| {
                    let o = similarity_map_on_tape(t, m, &adjs, 0.6, norm, Some(&Arc::new(vec![0, 3, 7, 8, 19]))).unwrap();
                    let z = t.constant(zc.select_rows(&[0, 3, 7, 8, 19]));
                    similarity_guided_loss(t, o, z, 1.0).unwrap()
                },
                &m0,
            );
        }
    }
}
