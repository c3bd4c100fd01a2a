//! The end-to-end synthetic benchmark: generate, inject, train, score, measure.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::injection::{inject_attribute, inject_structural, InjectionPlan};
use super::metrics::auc;
use super::synthetic::{generate_synthetic, SyntheticSpec};
use crate::error::{Result, SigilError};
use crate::model::PreparedGraph;
use crate::scoring::{score_model, MahalanobisConfig};
use crate::train::{train, TrainConfig, TrainOutputs};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkProtocol {
    pub synthetic: SyntheticSpec,
    pub plan: InjectionPlan,
    pub train: TrainConfig,
}

impl Default for BenchmarkProtocol {
    /// 300 nodes in 3 communities, 3 cliques of 5 plus 15 attribute
    /// anomalies, 2000 iterations at the default hyperparameters.
    fn default() -> Self {
        let synthetic = SyntheticSpec::default();
        let train = TrainConfig { iterations: 2000, clusters: vec![synthetic.communities], ..TrainConfig::default() };
        Self {
            plan: InjectionPlan { clique_size: 5, clique_count: 3, attr_candidates: 50, attr_count: 15, seed: 0 },
            synthetic,
            train,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub auc: f64,
    /// AUC of i.i.d. uniform scores on the same labels.
    pub random_auc: f64,
    /// AUC restricted to normal nodes plus clique members.
    pub structural_auc: f64,
    /// AUC restricted to normal nodes plus attribute anomalies.
    pub attribute_auc: f64,
    pub final_objective: f64,
    pub seconds: f64,
}

fn subset_auc(scores: &[f64], labels: &[bool], keep: &[bool]) -> Result<f64> {
    let (s, l): (Vec<f64>, Vec<bool>) =
        scores.iter().zip(labels).zip(keep).filter(|(_, &k)| k).map(|((&s, &l), _)| (s, l)).unzip();
    auc(&s, &l)
}

impl BenchmarkProtocol {
    /// One replicate. Graph, injection, training and baseline streams all
    /// derive from `seed`.
    pub fn run_seed(&self, seed: u64) -> Result<SeedOutcome> {
        let start = Instant::now();
        let graph = generate_synthetic(&SyntheticSpec { seed, ..self.synthetic.clone() })?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1a7e_c7ed);
        let (graph, cliques) = inject_structural(&graph, self.plan.clique_size, self.plan.clique_count, &mut rng)?;
        let (graph, donors) = inject_attribute(&graph, self.plan.attr_count, self.plan.attr_candidates, &mut rng)?;
        let labels = graph.labels().map(|l| l.flags().to_vec()).unwrap_or_default();
        if !labels.iter().any(|&l| l) {
            return Err(SigilError::InvalidConfig("benchmark plan injects no anomalies".into()));
        }

        let config = TrainConfig { seed, ..self.train.clone() };
        let (model, log) = train(&graph, &config, &TrainOutputs::default(), |_| {})?;
        let mahalanobis = MahalanobisConfig { reduction: config.cluster_reduction, ..MahalanobisConfig::default() };
        let (report, _) =
            score_model(&model, &PreparedGraph::new(&graph), config.beta, config.score_normalizer, mahalanobis)?;

        let n = graph.n();
        let mut structural = vec![false; n];
        for &i in cliques.iter().flatten() {
            structural[i] = true;
        }
        let mut attribute = vec![false; n];
        for (i, _) in &donors {
            attribute[*i] = true;
        }
        let keep_structural: Vec<bool> = (0..n).map(|i| !attribute[i]).collect();
        let keep_attribute: Vec<bool> = (0..n).map(|i| !structural[i]).collect();

        let mut baseline = ChaCha8Rng::seed_from_u64(seed ^ 0xba5e_11ee);
        let random: Vec<f64> = (0..n).map(|_| baseline.random()).collect();
        Ok(SeedOutcome {
            seed,
            auc: auc(&report.combined, &labels)?,
            random_auc: auc(&random, &labels)?,
            structural_auc: if cliques.is_empty() { f64::NAN } else { subset_auc(&report.combined, &labels, &keep_structural)? },
            attribute_auc: if donors.is_empty() { f64::NAN } else { subset_auc(&report.combined, &labels, &keep_attribute)? },
            final_objective: log.records.last().map_or(f64::NAN, |r| r.objective),
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    pub fn run(&self, seeds: impl IntoIterator<Item = u64>) -> Result<BenchmarkSummary> {
        let outcomes = seeds.into_iter().map(|s| self.run_seed(s)).collect::<Result<Vec<_>>>()?;
        Ok(BenchmarkSummary::new(outcomes))
    }
}

/// Lower median for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub outcomes: Vec<SeedOutcome>,
    pub median_auc: f64,
    pub median_random_auc: f64,
}

impl BenchmarkSummary {
    pub fn new(outcomes: Vec<SeedOutcome>) -> Self {
        let aucs: Vec<f64> = outcomes.iter().map(|o| o.auc).collect();
        let random: Vec<f64> = outcomes.iter().map(|o| o.random_auc).collect();
        Self { median_auc: median(&aucs), median_random_auc: median(&random), outcomes }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for o in &self.outcomes {
            s += &format!(
                "seed={} auc={:.4} random={:.4} structural={:.4} attribute={:.4} J={:.4e} {:.1}s\n",
                o.seed, o.auc, o.random_auc, o.structural_auc, o.attribute_auc, o.final_objective, o.seconds
            );
        }
        s += &format!("median auc={:.4} random={:.4}\n", self.median_auc, self.median_random_auc);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchmarkProtocol {
        let mut p = BenchmarkProtocol::default();
        p.synthetic.n = 90;
        p.plan = InjectionPlan { clique_size: 4, clique_count: 2, attr_candidates: 20, attr_count: 6, seed: 0 };
        p.train.iterations = 20;
        p.train.hidden = 16;
        p
    }

    #[test]
    fn replicate_is_deterministic() {
        let p = small();
        let a = p.run_seed(3).unwrap();
        let b = p.run_seed(3).unwrap();
        assert_eq!((a.auc, a.random_auc, a.final_objective), (b.auc, b.random_auc, b.final_objective));
        assert!((0.0..=1.0).contains(&a.auc) && (0.0..=1.0).contains(&a.structural_auc));
    }

    #[test]
    fn median_picks_middle() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.0);
    }

    #[test]
    fn empty_plan_is_rejected() {
        let mut p = small();
        p.plan.clique_count = 0;
        p.plan.attr_count = 0;
        assert!(p.run_seed(0).is_err());
    }
}
