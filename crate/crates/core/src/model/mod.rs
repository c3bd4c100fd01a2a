//! Multi-view hierarchical graph autoencoder.
//!
//! The encoder pools every view with one shared soft assignment per layer and
//! augments each coarse adjacency with the similarity of the assignment
//! columns. The decoder mirrors it with learned unpooling assignments and
//! reconstructs every view's node features.

mod checkpoint;
mod forward;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint, CHECKPOINT_VERSION,
};
pub use forward::{
    augmentation_gap, decode, encode, forward, DecodeTrace, EncodeTrace, ForwardOptions, ForwardValues, PreparedGraph,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore};
use crate::error::{Result, SigilError};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Linear,
}

/// `act(norm(A) X W + b)` with `norm(A) = D^-1/2 (A + I) D^-1/2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GcnLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
}

/// Affine map `X W + b` without propagation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Axis of the decoder assignment softmax. `S_dec` is `n_coarse x n_fine`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderSoftmax {
    /// Each coarse node distributes over the fine nodes (rows sum to 1).
    #[default]
    Fine,
    /// Each fine node is a convex mix of coarse nodes (columns sum to 1).
    Coarse,
}

impl std::str::FromStr for DecoderSoftmax {
    type Err = SigilError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fine" => Ok(Self::Fine),
            "coarse" => Ok(Self::Coarse),
            _ => Err(SigilError::InvalidConfig(format!("unknown decoder softmax axis `{s}` (fine|coarse)"))),
        }
    }
}

impl std::fmt::Display for DecoderSoftmax {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Fine => "fine",
            Self::Coarse => "coarse",
        })
    }
}

/// Architecture descriptor. Everything needed to rebuild the parameter layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Fine node count `n_0`.
    pub nodes: usize,
    /// Feature width of every view.
    pub feature_dims: Vec<usize>,
    pub hidden: usize,
    /// Supernode counts `n_1 > ... > n_L`.
    pub clusters: Vec<usize>,
    /// Add `sigmoid(S S^T - 1/2)` to the adjacency before coarsening.
    pub augment: bool,
    #[serde(default)]
    pub decoder_softmax: DecoderSoftmax,
}

impl ModelSpec {
    pub fn new(nodes: usize, feature_dims: Vec<usize>, hidden: usize, clusters: Vec<usize>) -> Self {
        Self { nodes, feature_dims, hidden, clusters, augment: true, decoder_softmax: DecoderSoftmax::default() }
    }

    pub fn layers(&self) -> usize {
        self.clusters.len()
    }

    pub fn views(&self) -> usize {
        self.feature_dims.len()
    }

    /// Node count at level `l`, with level 0 the input graph.
    pub fn level_size(&self, l: usize) -> usize {
        if l == 0 {
            self.nodes
        } else {
            self.clusters[l - 1]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SigilError::InvalidConfig(msg));
        if self.feature_dims.is_empty() {
            return bad("model needs at least one view".into());
        }
        if self.hidden == 0 || self.feature_dims.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if self.clusters.is_empty() {
            return bad("model needs at least one pooling layer".into());
        }
        let mut prev = self.nodes;
        for &k in &self.clusters {
            if k < 2 || k >= prev {
                return bad(format!(
                    "cluster counts must strictly decrease from {} and stay >= 2, got {:?}",
                    self.nodes, self.clusters
                ));
            }
            prev = k;
        }
        Ok(())
    }
}

/// Parameters of the full autoencoder plus the layer wiring.
#[derive(Clone, Debug, PartialEq)]
pub struct SigilModel {
    pub spec: ModelSpec,
    pub params: ParamStore,
    /// `enc[a][l]`: view `a`, level `l` representation GCN.
    pub enc: Vec<Vec<GcnLayer>>,
    /// `pool_proj[a][l]`: per-view projection ahead of the shared pooling GCN.
    pub pool_proj: Vec<Vec<Linear>>,
    /// `pool[l]`: shared assignment GCN producing `n_{l+1}` logits.
    pub pool: Vec<GcnLayer>,
    /// `dec[a][l]`: view `a` decoder GCN at unpooling step `l`.
    pub dec: Vec<Vec<GcnLayer>>,
    /// `unpool[l]`: shared GCN producing logits over the next finer level.
    pub unpool: Vec<GcnLayer>,
}

struct Builder<'a> {
    params: ParamStore,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl Builder<'_> {
    fn weight(&mut self, name: String, fan_in: usize, fan_out: usize) -> ParamId {
        let value = match self.rng.as_deref_mut() {
            Some(rng) => {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-limit..limit))
            }
            None => Matrix::zeros(fan_in, fan_out),
        };
        self.params.push(name, value, true)
    }

    fn bias(&mut self, name: String, width: usize) -> ParamId {
        self.params.push(name, Matrix::zeros(1, width), false)
    }

    fn gcn(&mut self, name: &str, fan_in: usize, fan_out: usize, activation: Activation) -> GcnLayer {
        GcnLayer {
            weight: self.weight(format!("{name}.weight"), fan_in, fan_out),
            bias: self.bias(format!("{name}.bias"), fan_out),
            activation,
        }
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear { weight: self.weight(format!("{name}.weight"), fan_in, fan_out), bias: self.bias(format!("{name}.bias"), fan_out) }
    }
}

impl SigilModel {
    /// Glorot-uniform weights, zero biases, deterministic in `seed`.
    pub fn initialize(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(spec, Some(&mut rng))
    }

    /// Same layout as [`initialize`](Self::initialize) with all-zero values.
    pub fn zeroed(spec: ModelSpec) -> Result<Self> {
        Self::build(spec, None)
    }

    fn build(spec: ModelSpec, rng: Option<&mut ChaCha8Rng>) -> Result<Self> {
        spec.validate()?;
        let mut b = Builder { params: ParamStore::new(), rng };
        let (h, layers, views) = (spec.hidden, spec.layers(), spec.views());

        let mut enc = Vec::with_capacity(views);
        let mut pool_proj = Vec::with_capacity(views);
        for (a, &d) in spec.feature_dims.iter().enumerate() {
            let mut e = Vec::with_capacity(layers);
            let mut p = Vec::with_capacity(layers);
            for l in 0..layers {
                let fan_in = if l == 0 { d } else { h };
                e.push(b.gcn(&format!("enc.{a}.{l}"), fan_in, h, Activation::Relu));
                p.push(b.linear(&format!("pool_proj.{a}.{l}"), fan_in, h));
            }
            enc.push(e);
            pool_proj.push(p);
        }
        let pool = (0..layers)
            .map(|l| b.gcn(&format!("pool.{l}"), h, spec.level_size(l + 1), Activation::Linear))
            .collect();

        let mut dec = Vec::with_capacity(views);
        for (a, &d) in spec.feature_dims.iter().enumerate() {
            dec.push(
                (0..layers)
                    .map(|l| {
                        if l + 1 == layers {
                            b.gcn(&format!("dec.{a}.{l}"), h, d, Activation::Linear)
                        } else {
                            b.gcn(&format!("dec.{a}.{l}"), h, h, Activation::Relu)
                        }
                    })
                    .collect(),
            );
        }
        // Step l maps level L-l to level L-l-1.
        let unpool = (0..layers)
            .map(|l| b.gcn(&format!("unpool.{l}"), h, spec.level_size(layers - l - 1), Activation::Linear))
            .collect();

        Ok(Self { spec, params: b.params, enc, pool_proj, pool, dec, unpool })
    }
}
