//! Anomaly injection, synthetic graphs, and evaluation metrics.

pub mod injection;
pub mod metrics;
pub mod protocol;
pub mod synthetic;

pub use injection::{inject_attribute, inject_attribute_at, inject_structural, InjectionPlan};
pub use metrics::{auc, recall_at_k, recall_from_ranking, MetricReport};
pub use protocol::{median, BenchmarkProtocol, BenchmarkSummary, SeedOutcome};
pub use synthetic::{generate_single_view, generate_synthetic, SyntheticSpec};
