//! Ranking metrics: AUC (Mann-Whitney with half credit for ties) and Recall@K.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SigilError};
use crate::scoring::rank_descending;

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(SigilError::Metric(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(SigilError::Metric("non-finite score".into()));
    }
    Ok(())
}

/// Probability that a random anomaly outscores a random normal node.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(SigilError::Metric("AUC needs at least one anomaly and one normal node".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of midranks of the positives.
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && scores[idx[end]] == scores[idx[start]] {
            end += 1;
        }
        let midrank = (start + end + 1) as f64 / 2.0;
        rank_sum += midrank * idx[start..end].iter().filter(|&&i| labels[i]).count() as f64;
        start = end;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Fraction of all anomalies found among the `k` highest scores.
pub fn recall_at_k(scores: &[f64], labels: &[bool], k: usize) -> Result<f64> {
    check_lengths(scores, labels)?;
    recall_from_ranking(&rank_descending(scores), labels, k)
}

pub fn recall_from_ranking(ranking: &[usize], labels: &[bool], k: usize) -> Result<f64> {
    if k == 0 || k > ranking.len() {
        return Err(SigilError::Metric(format!("K must lie in 1..={}, got {k}", ranking.len())));
    }
    let total = labels.iter().filter(|&&l| l).count();
    if total == 0 {
        return Err(SigilError::Metric("recall needs at least one anomaly".into()));
    }
    let hits = ranking[..k].iter().filter(|&&i| labels[i]).count();
    Ok(hits as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc: f64,
    pub recall_at_k: BTreeMap<usize, f64>,
    pub n: usize,
    pub anomaly_count: usize,
}

fn fmt12(x: f64) -> String {
    format!("{x:.11e}")
}

fn round12(x: f64) -> f64 {
    fmt12(x).parse().expect("formatted float parses")
}

impl MetricReport {
    /// Metrics from a precomputed ranking (ties already broken) and scores.
    pub fn evaluate(scores: &[f64], ranking: &[usize], labels: &[bool], ks: &[usize]) -> Result<Self> {
        if ranking.len() != labels.len() {
            return Err(SigilError::Metric(format!("{} ranked nodes but {} labels", ranking.len(), labels.len())));
        }
        let auc = auc(scores, labels)?;
        let mut recall_at_k = BTreeMap::new();
        for &k in ks {
            recall_at_k.insert(k, recall_from_ranking(ranking, labels, k)?);
        }
        Ok(Self { auc, recall_at_k, n: labels.len(), anomaly_count: labels.iter().filter(|&&l| l).count() })
    }

    /// `key = value` lines with 12 significant digits.
    pub fn render_text(&self) -> String {
        let mut s = format!("n = {}\nanomaly_count = {}\nauc = {}\n", self.n, self.anomaly_count, fmt12(self.auc));
        for (k, r) in &self.recall_at_k {
            writeln!(s, "recall@{k} = {}", fmt12(*r)).expect("write to string");
        }
        s
    }

    /// JSON carrying the same 12-digit values as the text form.
    pub fn render_json(&self) -> String {
        let rounded = Self {
            auc: round12(self.auc),
            recall_at_k: self.recall_at_k.iter().map(|(&k, &r)| (k, round12(r))).collect(),
            ..self.clone()
        };
        serde_json::to_string_pretty(&rounded).expect("metric report serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    den += 1.0;
                    num += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_edge_cases() {
        assert_eq!(auc(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert!(auc(&[0.1, 0.2], &[true, true]).is_err());
        assert!(auc(&[0.1], &[true, false]).is_err());
    }

    #[test]
    fn auc_matches_pairwise_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let labels: Vec<bool> = (0..100).map(|i| i < 10 || rng.random_bool(0.1)).collect();
            // coarse grid so ties occur
            let scores: Vec<f64> = (0..100).map(|_| (rng.random_range(0..20) as f64) * 0.1).collect();
            assert!((auc(&scores, &labels).unwrap() - brute_auc(&scores, &labels)).abs() < 1e-12);
        }
    }

    #[test]
    fn recall_examples() {
        // 70 anomalies, 7 of them in the top 50
        let n = 1000;
        let mut labels = vec![false; n];
        let mut scores = vec![0.0; n];
        for i in 0..50 {
            scores[i] = 1000.0 - i as f64;
        }
        for i in 0..7 {
            labels[i] = true;
        }
        for i in 0..63 {
            labels[100 + i] = true;
        }
        assert!((recall_at_k(&scores, &labels, 50).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(recall_at_k(&scores, &labels, n).unwrap(), 1.0);
        assert!(recall_at_k(&scores, &labels, 0).is_err());
        assert!(recall_at_k(&scores, &labels, n + 1).is_err());
        let s = [3.0, 2.0, 1.0];
        assert_eq!(recall_at_k(&s, &[false, false, true], 2).unwrap(), 0.0);
    }

    #[test]
    fn report_renders_same_numbers_in_both_forms() {
        let scores = [0.3, 0.9, 0.1, 0.7];
        let labels = [false, true, false, true];
        let ranking = rank_descending(&scores);
        let r = MetricReport::evaluate(&scores, &ranking, &labels, &[1, 2, 4]).unwrap();
        assert_eq!(r.auc, 1.0);
        let text = r.render_text();
        assert!(text.contains("recall@1 = 5.00000000000e-1"));
        let json: MetricReport = serde_json::from_str(&r.render_json()).unwrap();
        assert_eq!(json.recall_at_k[&1], 0.5);
        assert!(MetricReport::evaluate(&scores, &ranking, &labels[..3], &[1]).is_err());
    }
}
