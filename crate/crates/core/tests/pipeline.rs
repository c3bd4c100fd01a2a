//! Library-level pipeline: bundle on disk, training with checkpoints, scoring.

use sigil_core::benchmark::{generate_synthetic, InjectionPlan, MetricReport};
use sigil_core::graph::bundle::{load_bundle, save_bundle};
use sigil_core::model::{load_checkpoint, load_checkpoint_for};
use sigil_core::scoring::reconstruction_scores;
use sigil_core::train::TrainOutputs;
use sigil_core::{
    score_model, train, MahalanobisConfig, PreparedGraph, ScoreNormalizer, SigilError, SyntheticSpec, TrainConfig,
    TrainSession,
};
use tempfile::TempDir;

fn injected(n: usize, seed: u64) -> sigil_core::MultiViewGraph {
    let g = generate_synthetic(&SyntheticSpec { n, feature_dim: 6, seed, ..SyntheticSpec::default() }).unwrap();
    InjectionPlan { clique_size: 4, clique_count: 2, attr_candidates: 20, attr_count: 6, seed }.apply(&g).unwrap()
}

fn small_config(iterations: usize) -> TrainConfig {
    TrainConfig { iterations, hidden: 10, clusters: vec![6, 3], log_interval: 5, seed: 4, ..TrainConfig::default() }
}

#[test]
fn bundle_train_checkpoint_score_evaluate() {
    let dir = TempDir::new().unwrap();
    let g = injected(80, 1);
    save_bundle(&g, dir.path()).unwrap();
    let g = load_bundle(dir.path()).unwrap();
    assert_eq!(g.labels().unwrap().count(), 14);

    let ckpt = dir.path().join("m.ckpt");
    let config = small_config(20);
    let mut logged = 0;
    let (model, log) = train(&g, &config, &TrainOutputs { checkpoint: Some(ckpt.clone()) }, |_| logged += 1).unwrap();
    assert_eq!(logged, log.records.len());
    assert_eq!(log.records.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![1, 5, 10, 15, 20]);
    assert!(log.records.iter().all(|r| r.objective.is_finite() && r.stochastic_error < 1e-10));

    let restored = load_checkpoint_for(&ckpt, &config.model_spec(&g)).unwrap();
    assert_eq!(restored.params.checksum(), model.params.checksum());

    let prepared = PreparedGraph::new(&g);
    let (report, _) = score_model(&restored, &prepared, 0.5, ScoreNormalizer::Zscore, MahalanobisConfig::default()).unwrap();
    assert_eq!(report.len(), 80);
    let m = MetricReport::evaluate(&report.combined, &report.ranking, g.labels().unwrap().flags(), &[14, 80]).unwrap();
    assert_eq!(m.recall_at_k[&80], 1.0);
    assert!((0.0..=1.0).contains(&m.auc));
}

#[test]
fn checkpoint_for_a_different_architecture_is_rejected() {
    let dir = TempDir::new().unwrap();
    let g = injected(60, 2);
    let ckpt = dir.path().join("m.ckpt");
    train(&g, &small_config(2), &TrainOutputs { checkpoint: Some(ckpt.clone()) }, |_| {}).unwrap();
    let mut other = small_config(2).model_spec(&g);
    other.hidden += 1;
    assert!(matches!(load_checkpoint_for(&ckpt, &other), Err(SigilError::Checkpoint(_))));
}

#[test]
fn resumed_session_continues_the_same_trajectory_parameters() {
    // Resuming restarts the optimizer moments, so only the parameters carry over.
    let g = injected(60, 3);
    let dir = TempDir::new().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let config = small_config(5);
    let (model, _) = train(&g, &config, &TrainOutputs { checkpoint: Some(ckpt.clone()) }, |_| {}).unwrap();
    let loaded = load_checkpoint(&ckpt).unwrap();
    let mut session = TrainSession::resume(&g, config, loaded).unwrap();
    assert_eq!(session.model.params.checksum(), model.params.checksum());
    let stats = session.step().unwrap();
    assert!(stats.objective.is_finite());
}

#[test]
fn beta_zero_scores_are_reconstruction_errors() {
    let g = injected(60, 5);
    let (model, _) = train(&g, &small_config(3), &TrainOutputs::default(), |_| {}).unwrap();
    let prepared = PreparedGraph::new(&g);
    let (report, _) = score_model(&model, &prepared, 0.0, ScoreNormalizer::None, MahalanobisConfig::default()).unwrap();
    let values = sigil_core::model::ForwardValues::compute(&model, &prepared, Default::default()).unwrap();
    let direct = reconstruction_scores(&prepared.features, &values.reconstructions).unwrap();
    assert_eq!(report.score1, direct);
    assert_eq!(report.combined, direct);
}
