//! Multi-view graph anomaly detection with a hierarchical pooling autoencoder
//! and a similarity-guided contrastive regularizer.
//!
//! The crate is self-contained: dense and sparse matrices, a reverse-mode
//! tape, the model, its losses, training, scoring and the synthetic benchmark.

pub mod autodiff;
pub mod benchmark;
pub mod diagnostics;
pub mod error;
pub mod graph;
pub mod kv;
pub mod losses;
pub mod matrix;
pub mod model;
pub mod scoring;
pub mod train;

pub use benchmark::{InjectionPlan, MetricReport, SyntheticSpec};
pub use diagnostics::DiagnosticReport;
pub use error::{CheckpointError, Result, SigilError};
pub use graph::{AnomalyLabels, MultiViewGraph, View};
pub use kv::KeyValues;
pub use losses::{LossConfig, LossVariant, Normalization};
pub use matrix::{Csr, Matrix};
pub use model::{DecoderSoftmax, ModelSpec, PreparedGraph, SigilModel};
pub use scoring::{score_model, ClusterReduction, MahalanobisConfig, Ridge, ScoreNormalizer, ScoreReport};
pub use train::{train, TrainConfig, TrainLog, TrainOutputs, TrainSession};
