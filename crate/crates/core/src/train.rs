//! Full-graph training loop: forward, objective, backward, Adam.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, Tape};
use crate::error::{Result, SigilError};
use crate::graph::MultiViewGraph;
use crate::kv::KeyValues;
use crate::losses::{objective, sample_nodes, LossConfig, LossVariant, Normalization};
use crate::matrix::Matrix;
use crate::model::{forward, DecoderSoftmax, save_checkpoint, DecodeTrace, EncodeTrace, ForwardOptions, ModelSpec, PreparedGraph, SigilModel};
use crate::scoring::{ClusterReduction, ScoreNormalizer};

pub const ENV_PREFIX: &str = "SIGIL_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub adam: AdamConfig,
    pub hidden: usize,
    /// Supernode counts per pooling layer; the layer count is its length.
    pub clusters: Vec<usize>,
    pub loss: LossConfig,
    pub augment: bool,
    pub decoder_softmax: DecoderSoftmax,
    pub beta: f64,
    pub score_normalizer: ScoreNormalizer,
    pub cluster_reduction: ClusterReduction,
    pub seed: u64,
    pub log_interval: usize,
    /// Save a checkpoint every this many iterations; 0 saves only at the end.
    pub checkpoint_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            adam: AdamConfig::default(),
            hidden: 100,
            clusters: vec![10],
            loss: LossConfig::default(),
            augment: true,
            decoder_softmax: DecoderSoftmax::default(),
            beta: 0.0,
            score_normalizer: ScoreNormalizer::default(),
            cluster_reduction: ClusterReduction::default(),
            seed: 0,
            log_interval: 100,
            checkpoint_interval: 0,
        }
    }
}

/// Every recognised config key, in documentation order.
pub const CONFIG_KEYS: &[&str] = &[
    "iterations",
    "lr",
    "weight_decay",
    "beta1",
    "beta2",
    "eps",
    "hidden",
    "layers",
    "clusters",
    "lambda",
    "alpha",
    "beta",
    "tau",
    "pair_sample",
    "seed",
    "loss_variant",
    "normalization",
    "differentiable_map",
    "augment",
    "decoder_softmax",
    "score_normalizer",
    "cluster_reduction",
    "log_interval",
    "checkpoint_interval",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse::<T>().map_err(|_| SigilError::InvalidConfig(format!("cannot parse `{value}` for `{key}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse::<usize>(key, v)).collect()
}

impl TrainConfig {
    /// Sets one key. `layers` only checks consistency with `clusters`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "iterations" => self.iterations = parse(key, value)?,
            "lr" => self.adam.lr = parse(key, value)?,
            "weight_decay" => self.adam.weight_decay = parse(key, value)?,
            "beta1" => self.adam.beta1 = parse(key, value)?,
            "beta2" => self.adam.beta2 = parse(key, value)?,
            "eps" => self.adam.eps = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "layers" => {
                let l: usize = parse(key, value)?;
                if l != self.clusters.len() {
                    return Err(SigilError::InvalidConfig(format!(
                        "layers = {l} but clusters lists {} counts ({:?})",
                        self.clusters.len(),
                        self.clusters
                    )));
                }
            }
            "clusters" => self.clusters = parse_list(key, value)?,
            "lambda" => self.loss.lambda = parse(key, value)?,
            "alpha" => self.loss.alpha = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "tau" => self.loss.tau = parse(key, value)?,
            "pair_sample" => self.loss.pair_sample_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "loss_variant" => self.loss.variant = value.trim().parse::<LossVariant>()?,
            "normalization" => self.loss.normalization = value.trim().parse::<Normalization>()?,
            "differentiable_map" => self.loss.differentiable_map = parse(key, value)?,
            "augment" => self.augment = parse(key, value)?,
            "decoder_softmax" => self.decoder_softmax = value.trim().parse::<DecoderSoftmax>()?,
            "score_normalizer" => self.score_normalizer = value.trim().parse::<ScoreNormalizer>()?,
            "cluster_reduction" => self.cluster_reduction = value.trim().parse::<ClusterReduction>()?,
            "log_interval" => self.log_interval = parse(key, value)?,
            "checkpoint_interval" => self.checkpoint_interval = parse(key, value)?,
            _ => return Err(SigilError::InvalidConfig(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies keys in order, deferring `layers` until `clusters` is known.
    pub fn apply<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        let mut layers = None;
        for (k, v) in pairs {
            if k == "layers" {
                layers = Some(v);
            } else {
                self.set(k, v)?;
            }
        }
        if let Some(v) = layers {
            self.set("layers", v)?;
        }
        Ok(())
    }

    pub fn apply_kv(&mut self, kv: &KeyValues) -> Result<()> {
        self.apply(kv.iter())
    }

    /// Applies `SIGIL_<KEY>` variables from `vars` (normally `std::env::vars()`).
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<Vec<String>> {
        let found: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| {
                let key = k.strip_prefix(ENV_PREFIX)?.to_ascii_lowercase();
                CONFIG_KEYS.contains(&key.as_str()).then_some((key, v))
            })
            .collect();
        self.apply(found.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        Ok(found.into_iter().map(|(k, _)| k).collect())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut c = Self::default();
        c.apply_kv(&KeyValues::read(path)?)?;
        Ok(c)
    }

    /// Every key with its resolved value.
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.insert("iterations", self.iterations);
        kv.insert("lr", self.adam.lr);
        kv.insert("weight_decay", self.adam.weight_decay);
        kv.insert("beta1", self.adam.beta1);
        kv.insert("beta2", self.adam.beta2);
        kv.insert("eps", self.adam.eps);
        kv.insert("hidden", self.hidden);
        kv.insert("layers", self.clusters.len());
        kv.insert("clusters", self.clusters.iter().map(usize::to_string).collect::<Vec<_>>().join(","));
        kv.insert("lambda", self.loss.lambda);
        kv.insert("alpha", self.loss.alpha);
        kv.insert("beta", self.beta);
        kv.insert("tau", self.loss.tau);
        kv.insert("pair_sample", self.loss.pair_sample_size);
        kv.insert("seed", self.seed);
        kv.insert("loss_variant", self.loss.variant);
        kv.insert("normalization", self.loss.normalization);
        kv.insert("differentiable_map", self.loss.differentiable_map);
        kv.insert("augment", self.augment);
        kv.insert("decoder_softmax", self.decoder_softmax);
        kv.insert("score_normalizer", self.score_normalizer);
        kv.insert("cluster_reduction", self.cluster_reduction);
        kv.insert("log_interval", self.log_interval);
        kv.insert("checkpoint_interval", self.checkpoint_interval);
        kv
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SigilError::InvalidConfig(m));
        if self.iterations == 0 {
            return bad("iterations must be >= 1".into());
        }
        if !(self.adam.lr > 0.0) || !(self.adam.weight_decay >= 0.0) {
            return bad("learning rate must be > 0 and weight decay >= 0".into());
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) || !(self.adam.eps > 0.0) {
            return bad("Adam betas must lie in [0, 1) and eps must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        if self.log_interval == 0 {
            return bad("log_interval must be >= 1".into());
        }
        self.loss.validate()
    }

    pub fn model_spec(&self, graph: &MultiViewGraph) -> ModelSpec {
        let mut spec = ModelSpec::new(graph.n(), graph.feature_dims(), self.hidden, self.clusters.clone());
        spec.augment = self.augment;
        spec.decoder_softmax = self.decoder_softmax;
        spec
    }
}

/// Measurements of one optimization step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub iteration: usize,
    pub objective: f64,
    pub reconstruction: f64,
    pub contrastive: f64,
    pub grad_norm: f64,
    /// Largest `|row sum - 1|` over every encoder/decoder assignment and `M`.
    pub stochastic_error: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<StepStats>,
}

impl TrainLog {
    /// One line per record. Wall time is left out so reruns give identical files.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            writeln!(
                s,
                "iter={} J={:.12e} L_r={:.12e} L_c={:.12e} grad_norm={:.12e} stochastic_err={:.3e}",
                r.iteration, r.objective, r.reconstruction, r.contrastive, r.grad_norm, r.stochastic_error
            )
            .expect("write to string");
        }
        s
    }

    pub fn total_seconds(&self) -> f64 {
        self.records.iter().map(|r| r.seconds).sum()
    }
}

fn row_stochastic_error(m: &Matrix) -> f64 {
    m.row_sums().iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max)
}

/// A model, its optimizer state and its sampling stream.
pub struct TrainSession {
    pub config: TrainConfig,
    pub model: SigilModel,
    pub adam: AdamState,
    prepared: PreparedGraph,
    rng: ChaCha8Rng,
    iteration: usize,
}

impl TrainSession {
    pub fn new(graph: &MultiViewGraph, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = SigilModel::initialize(config.model_spec(graph), config.seed)?;
        Self::resume(graph, config, model)
    }

    /// Continues from existing parameters with fresh optimizer state.
    pub fn resume(graph: &MultiViewGraph, config: TrainConfig, model: SigilModel) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(config.adam, &model.params);
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5a3b_1e00_0001);
        Ok(Self { prepared: PreparedGraph::new(graph), config, model, adam, rng, iteration: 0 })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn prepared(&self) -> &PreparedGraph {
        &self.prepared
    }

    pub fn step(&mut self) -> Result<StepStats> {
        self.step_inspect(|_, _, _| {})
    }

    /// One step; `inspect` sees the forward pass before parameters change.
    pub fn step_inspect(&mut self, inspect: impl FnOnce(&Tape, &EncodeTrace, &DecodeTrace)) -> Result<StepStats> {
        let start = Instant::now();
        let iteration = self.iteration + 1;
        let diverged = |e: SigilError| match e {
            SigilError::NonFinite { .. } => SigilError::Diverged { iteration, value: f64::NAN },
            other => other,
        };
        let n = self.prepared.n;
        let mut tape = Tape::new();
        let (bound, enc, dec) =
            forward(&mut tape, &self.model, &self.prepared, ForwardOptions::default()).map_err(diverged)?;
        let sample = match self.config.loss.variant {
            LossVariant::None => None,
            _ if self.config.loss.pair_sample_size >= n => None,
            _ => Some(sample_nodes(n, self.config.loss.pair_sample_size, &mut self.rng)),
        };
        let xs: Vec<_> = self.prepared.features.iter().map(|x| tape.constant(x.clone())).collect();
        let terms = objective(
            &mut tape,
            &self.config.loss,
            &xs,
            &dec.reconstructions,
            &enc.fine_embeddings(),
            enc.composed,
            &self.prepared.raw,
            sample.as_ref(),
        )
        .map_err(diverged)?;
        let j = tape.value(terms.objective).item();
        if !j.is_finite() {
            return Err(SigilError::Diverged { iteration, value: j });
        }
        inspect(&tape, &enc, &dec);
        let stochastic_error = if iteration.is_multiple_of(self.config.log_interval) || iteration == 1 {
            enc.assignments
                .iter()
                .chain(&dec.assignments)
                .chain(std::iter::once(&enc.composed))
                .map(|&v| row_stochastic_error(tape.value(v)))
                .fold(0.0, f64::max)
        } else {
            0.0
        };
        let mut grads = tape.backward(terms.objective)?;
        let grads: Vec<Matrix> = bound.vars().iter().map(|&v| grads.take(v)).collect();
        let grad_norm = grads.iter().map(Matrix::frobenius_sq).sum::<f64>().sqrt();
        self.adam.step(&mut self.model.params, &grads)?;
        self.iteration = iteration;
        Ok(StepStats {
            iteration,
            objective: j,
            reconstruction: tape.value(terms.reconstruction).item(),
            contrastive: terms.contrastive.map_or(0.0, |c| tape.value(c).item()),
            grad_norm,
            stochastic_error,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// Where training writes intermediate artifacts.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    pub checkpoint: Option<PathBuf>,
}

/// Runs `config.iterations` steps. Logs the first step, every
/// `log_interval`-th step and the last one.
pub fn train(
    graph: &MultiViewGraph,
    config: &TrainConfig,
    outputs: &TrainOutputs,
    mut on_log: impl FnMut(&StepStats),
) -> Result<(SigilModel, TrainLog)> {
    let mut session = TrainSession::new(graph, config.clone())?;
    let mut log = TrainLog::default();
    for it in 1..=config.iterations {
        let stats = session.step()?;
        if it == 1 || it % config.log_interval == 0 || it == config.iterations {
            on_log(&stats);
            log.records.push(stats);
        }
        if let Some(path) = &outputs.checkpoint {
            if config.checkpoint_interval > 0 && it % config.checkpoint_interval == 0 {
                save_checkpoint(&session.model, path)?;
            }
        }
    }
    if let Some(path) = &outputs.checkpoint {
        save_checkpoint(&session.model, path)?;
    }
    Ok((session.model, log))
}

/// Gradient of `J` for every parameter, in parameter order.
pub fn objective_gradients(
    model: &SigilModel,
    prepared: &PreparedGraph,
    loss: &LossConfig,
    sample: Option<&Arc<Vec<usize>>>,
) -> Result<(f64, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let (bound, enc, dec) = forward(&mut tape, model, prepared, ForwardOptions::default())?;
    let xs: Vec<_> = prepared.features.iter().map(|x| tape.constant(x.clone())).collect();
    let terms =
        objective(&mut tape, loss, &xs, &dec.reconstructions, &enc.fine_embeddings(), enc.composed, &prepared.raw, sample)?;
    let mut grads = tape.backward(terms.objective)?;
    let g = bound.vars().iter().map(|&v| grads.take(v)).collect();
    Ok((tape.value(terms.objective).item(), g))
}
