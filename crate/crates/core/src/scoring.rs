//! Per-node anomaly scores: reconstruction error, Mahalanobis distance to the
//! nearest cluster, and their normalized mix.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SigilError};
use crate::matrix::Matrix;
use crate::model::{ForwardOptions, ForwardValues, PreparedGraph, SigilModel};

/// `score1(i) = sum_a ||x_i^a - xhat_i^a||^2`.
pub fn reconstruction_scores(x: &[Matrix], x_hat: &[Matrix]) -> Result<Vec<f64>> {
    let n = x.first().map_or(0, Matrix::rows);
    let mut scores = vec![0.0; n];
    for (xa, ha) in x.iter().zip(x_hat) {
        if xa.shape() != ha.shape() || xa.rows() != n {
            return Err(SigilError::ShapeMismatch { op: "reconstruction_scores", left: xa.shape(), right: ha.shape() });
        }
        for (i, s) in scores.iter_mut().enumerate() {
            *s += xa.row(i).iter().zip(ha.row(i)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    Ok(scores)
}

/// Diagonal regularization added to every cluster covariance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Ridge {
    /// `c * trace(Sigma) / d`.
    Relative(f64),
    Absolute(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::Relative(1e-4)
    }
}

/// Where the minimum over clusters sits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterReduction {
    /// `min_k sum_a d_k^a(i)`.
    #[default]
    MinOfSum,
    /// `sum_a min_k d_k^a(i)`.
    SumOfMin,
}

impl FromStr for ClusterReduction {
    type Err = SigilError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min_of_sum" => Ok(Self::MinOfSum),
            "sum_of_min" => Ok(Self::SumOfMin),
            _ => Err(SigilError::InvalidConfig(format!("unknown cluster reduction `{s}` (min_of_sum|sum_of_min)"))),
        }
    }
}

impl std::fmt::Display for ClusterReduction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::MinOfSum => "min_of_sum",
            Self::SumOfMin => "sum_of_min",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MahalanobisConfig {
    pub ridge: Ridge,
    pub reduction: ClusterReduction,
}

/// Cholesky factor of a regularized covariance, or identity.
#[derive(Clone, Debug)]
enum Metric {
    Cholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Identity,
}

/// Per-cluster, per-view means and covariances. Empty clusters are absent.
#[derive(Clone, Debug)]
pub struct ClusterStats {
    /// Cluster ids that have at least one member, ascending.
    pub clusters: Vec<usize>,
    pub counts: Vec<usize>,
    /// `means[c][a]` for `clusters[c]`.
    pub means: Vec<Vec<Vec<f64>>>,
    /// `covariances[c][a]`, unbiased, before the ridge. `None` for singletons.
    pub covariances: Vec<Vec<Option<Matrix>>>,
    metrics: Vec<Vec<Metric>>,
    pub warnings: Vec<String>,
}

impl ClusterStats {
    pub fn compute(embeddings: &[Matrix], clusters: &[usize], ridge: Ridge) -> Result<Self> {
        let n = clusters.len();
        for z in embeddings {
            if z.rows() != n {
                return Err(SigilError::ShapeMismatch { op: "cluster_stats", left: z.shape(), right: (n, 0) });
            }
        }
        let max_id = clusters.iter().copied().max().unwrap_or(0);
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); max_id + 1];
        for (i, &c) in clusters.iter().enumerate() {
            members[c].push(i);
        }
        if !members.iter().any(|m| m.len() >= 2) {
            return Err(SigilError::InsufficientNodes { what: "cluster covariance", needed: 2, available: 1 });
        }
        let mut out = Self {
            clusters: Vec::new(),
            counts: Vec::new(),
            means: Vec::new(),
            covariances: Vec::new(),
            metrics: Vec::new(),
            warnings: Vec::new(),
        };
        for (c, idx) in members.iter().enumerate().filter(|(_, m)| !m.is_empty()) {
            let mut means = Vec::with_capacity(embeddings.len());
            let mut covs = Vec::with_capacity(embeddings.len());
            let mut metrics = Vec::with_capacity(embeddings.len());
            for (a, z) in embeddings.iter().enumerate() {
                let d = z.cols();
                let mut mu = vec![0.0; d];
                for &i in idx {
                    mu.iter_mut().zip(z.row(i)).for_each(|(m, v)| *m += v);
                }
                mu.iter_mut().for_each(|m| *m /= idx.len() as f64);
                if idx.len() < 2 {
                    out.warnings.push(format!("cluster {c} has a single member; view {a} uses identity covariance"));
                    covs.push(None);
                    metrics.push(Metric::Identity);
                    means.push(mu);
                    continue;
                }
                let mut cov = Matrix::zeros(d, d);
                for &i in idx {
                    let dev: Vec<f64> = z.row(i).iter().zip(&mu).map(|(v, m)| v - m).collect();
                    for p in 0..d {
                        let row = cov.row_mut(p);
                        for q in 0..d {
                            row[q] += dev[p] * dev[q];
                        }
                    }
                }
                let cov = cov.scale(1.0 / (idx.len() - 1) as f64);
                let trace: f64 = (0..d).map(|p| cov.get(p, p)).sum();
                let lambda = match ridge {
                    Ridge::Relative(r) => (r * trace / d as f64).max(1e-12),
                    Ridge::Absolute(r) => r,
                };
                let mut reg = DMatrix::from_row_slice(d, d, cov.as_slice());
                for p in 0..d {
                    reg[(p, p)] += lambda;
                }
                let metric = match nalgebra::Cholesky::new(reg) {
                    Some(ch) => Metric::Cholesky(ch),
                    None => {
                        out.warnings.push(format!(
                            "cluster {c} view {a}: covariance not positive definite after ridge; using identity"
                        ));
                        Metric::Identity
                    }
                };
                covs.push(Some(cov));
                metrics.push(metric);
                means.push(mu);
            }
            out.clusters.push(c);
            out.counts.push(idx.len());
            out.means.push(means);
            out.covariances.push(covs);
            out.metrics.push(metrics);
        }
        Ok(out)
    }

    /// `(z - mu)^T Sigma^-1 (z - mu)` for stored cluster slot `c`, view `a`.
    pub fn distance(&self, c: usize, a: usize, z: &[f64]) -> f64 {
        let dev: Vec<f64> = z.iter().zip(&self.means[c][a]).map(|(v, m)| v - m).collect();
        match &self.metrics[c][a] {
            Metric::Identity => dev.iter().map(|v| v * v).sum(),
            Metric::Cholesky(ch) => {
                let y = ch.l_dirty().solve_lower_triangular(&DVector::from_vec(dev)).expect("nonsingular factor");
                y.norm_squared()
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct MahalanobisOutcome {
    pub scores: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Mahalanobis distance of every node to the nearest cluster, summed over views.
pub fn mahalanobis_scores(embeddings: &[Matrix], clusters: &[usize], config: MahalanobisConfig) -> Result<MahalanobisOutcome> {
    let stats = ClusterStats::compute(embeddings, clusters, config.ridge)?;
    let n = clusters.len();
    let k = stats.clusters.len();
    let mut scores = Vec::with_capacity(n);
    for i in 0..n {
        let d: Vec<Vec<f64>> = (0..k)
            .map(|c| embeddings.iter().enumerate().map(|(a, z)| stats.distance(c, a, z.row(i))).collect())
            .collect();
        let s = match config.reduction {
            ClusterReduction::MinOfSum => d.iter().map(|per| per.iter().sum::<f64>()).fold(f64::INFINITY, f64::min),
            ClusterReduction::SumOfMin => {
                (0..embeddings.len()).map(|a| d.iter().map(|per| per[a]).fold(f64::INFINITY, f64::min)).sum()
            }
        };
        scores.push(s);
    }
    Ok(MahalanobisOutcome { scores, warnings: stats.warnings })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreNormalizer {
    #[default]
    Zscore,
    Minmax,
    None,
}

impl FromStr for ScoreNormalizer {
    type Err = SigilError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zscore" => Ok(Self::Zscore),
            "minmax" => Ok(Self::Minmax),
            "none" => Ok(Self::None),
            _ => Err(SigilError::InvalidConfig(format!("unknown normalizer `{s}` (zscore|minmax|none)"))),
        }
    }
}

impl std::fmt::Display for ScoreNormalizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Zscore => "zscore",
            Self::Minmax => "minmax",
            Self::None => "none",
        })
    }
}

impl ScoreNormalizer {
    /// Per-vector affine rescaling; constant vectors map to zeros.
    pub fn apply(self, v: &[f64]) -> Vec<f64> {
        let n = v.len().max(1) as f64;
        match self {
            Self::None => v.to_vec(),
            Self::Zscore => {
                let mean = v.iter().sum::<f64>() / n;
                let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                if sd > 0.0 {
                    v.iter().map(|x| (x - mean) / sd).collect()
                } else {
                    vec![0.0; v.len()]
                }
            }
            Self::Minmax => {
                let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if hi > lo {
                    v.iter().map(|x| (x - lo) / (hi - lo)).collect()
                } else {
                    vec![0.0; v.len()]
                }
            }
        }
    }
}

/// Node indices by score descending, ties by index ascending.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub score1: Vec<f64>,
    pub score2: Vec<f64>,
    pub combined: Vec<f64>,
    pub beta: f64,
    pub normalizer: ScoreNormalizer,
    /// Node indices, most anomalous first.
    pub ranking: Vec<usize>,
    pub cluster_assignment: Vec<usize>,
}

/// `(1 - beta) norm(score1) + beta norm(score2)`.
pub fn combine_scores(
    score1: Vec<f64>,
    score2: Vec<f64>,
    beta: f64,
    normalizer: ScoreNormalizer,
    cluster_assignment: Vec<usize>,
) -> Result<ScoreReport> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(SigilError::InvalidConfig(format!("beta must lie in [0, 1], got {beta}")));
    }
    if score1.len() != score2.len() || cluster_assignment.len() != score1.len() {
        return Err(SigilError::ShapeMismatch {
            op: "combine_scores",
            left: (score1.len(), 1),
            right: (score2.len(), cluster_assignment.len()),
        });
    }
    let n1 = normalizer.apply(&score1);
    let n2 = normalizer.apply(&score2);
    // The degenerate weights skip the other vector entirely so its values
    // cannot perturb the ranking.
    let combined: Vec<f64> = if beta == 0.0 {
        n1
    } else if beta == 1.0 {
        n2
    } else {
        n1.iter().zip(&n2).map(|(a, b)| (1.0 - beta) * a + beta * b).collect()
    };
    let ranking = rank_descending(&combined);
    Ok(ScoreReport { score1, score2, combined, beta, normalizer, ranking, cluster_assignment })
}

fn fmt12(x: f64) -> String {
    format!("{x:.11e}")
}

impl ScoreReport {
    pub fn len(&self) -> usize {
        self.combined.len()
    }

    pub fn is_empty(&self) -> bool {
        self.combined.is_empty()
    }

    /// 1-based rank of every node.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![0; self.len()];
        for (pos, &i) in self.ranking.iter().enumerate() {
            r[i] = pos + 1;
        }
        r
    }

    pub fn render(&self) -> String {
        let mut s = format!("# beta={} normalizer={}\nindex score1 score2 combined rank cluster\n", self.beta, self.normalizer);
        let ranks = self.ranks();
        for i in 0..self.len() {
            writeln!(
                s,
                "{i} {} {} {} {} {}",
                fmt12(self.score1[i]),
                fmt12(self.score2[i]),
                fmt12(self.combined[i]),
                ranks[i],
                self.cluster_assignment[i]
            )
            .expect("write to string");
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| SigilError::io(path, e))
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let perr = |line: usize, msg: String| SigilError::Parse { path: origin.to_path_buf(), line, msg };
        let mut lines = text.lines().enumerate();
        let (_, meta) = lines.next().ok_or_else(|| perr(1, "empty score report".into()))?;
        let mut beta = None;
        let mut normalizer = None;
        for tok in meta.trim_start_matches('#').split_whitespace() {
            match tok.split_once('=') {
                Some(("beta", v)) => beta = v.parse::<f64>().ok(),
                Some(("normalizer", v)) => normalizer = v.parse::<ScoreNormalizer>().ok(),
                _ => {}
            }
        }
        let (beta, normalizer) = beta.zip(normalizer).ok_or_else(|| perr(1, "missing `# beta=.. normalizer=..`".into()))?;
        match lines.next() {
            Some((_, h)) if h.split_whitespace().eq(["index", "score1", "score2", "combined", "rank", "cluster"]) => {}
            _ => return Err(perr(2, "missing column header".into())),
        }
        let mut rows = Vec::new();
        for (k, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 6 {
                return Err(perr(k + 1, format!("expected 6 columns, got {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| perr(k + 1, format!("bad number `{s}`")));
            let int = |s: &str| s.parse::<usize>().map_err(|_| perr(k + 1, format!("bad integer `{s}`")));
            let index = int(f[0])?;
            if index != rows.len() {
                return Err(perr(k + 1, format!("expected node {}, got {index}", rows.len())));
            }
            rows.push((num(f[1])?, num(f[2])?, num(f[3])?, int(f[4])?, int(f[5])?));
        }
        let n = rows.len();
        let mut ranking = vec![usize::MAX; n];
        for (i, r) in rows.iter().enumerate() {
            if r.3 == 0 || r.3 > n || ranking[r.3 - 1] != usize::MAX {
                return Err(perr(i + 3, format!("rank {} is not part of a permutation of 1..{n}", r.3)));
            }
            ranking[r.3 - 1] = i;
        }
        Ok(Self {
            score1: rows.iter().map(|r| r.0).collect(),
            score2: rows.iter().map(|r| r.1).collect(),
            combined: rows.iter().map(|r| r.2).collect(),
            beta,
            normalizer,
            ranking,
            cluster_assignment: rows.iter().map(|r| r.4).collect(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SigilError::io(path, e))?;
        Self::parse(&text, path)
    }
}

/// Scores every node of `graph` under a trained model. Clusters are the
/// argmax of the composed assignment `M`; embeddings are the first-layer
/// encoder outputs of each view.
pub fn score_model(
    model: &SigilModel,
    graph: &PreparedGraph,
    beta: f64,
    normalizer: ScoreNormalizer,
    config: MahalanobisConfig,
) -> Result<(ScoreReport, Vec<String>)> {
    let values = ForwardValues::compute(model, graph, ForwardOptions::default())?;
    let score1 = reconstruction_scores(&graph.features, &values.reconstructions)?;
    let clusters = values.composed.row_argmax();
    let outcome = mahalanobis_scores(&values.fine_embeddings, &clusters, config)?;
    let report = combine_scores(score1, outcome.scores, beta, normalizer, clusters)?;
    Ok((report, outcome.warnings))
}
