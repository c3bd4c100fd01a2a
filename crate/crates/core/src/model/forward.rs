//! Encoder and decoder passes recorded on a [`Tape`].

use std::sync::Arc;

use super::{Activation, DecoderSoftmax, GcnLayer, Linear, SigilModel};
use crate::autodiff::{BoundParams, Tape, Var};
use crate::error::{Result, SigilError};
use crate::graph::MultiViewGraph;
use crate::matrix::{gemm, Csr, Matrix};

/// Constant per-graph inputs: raw and GCN-normalized adjacencies, features.
#[derive(Clone, Debug)]
pub struct PreparedGraph {
    pub n: usize,
    pub raw: Vec<Arc<Csr>>,
    pub normalized: Vec<Arc<Csr>>,
    pub features: Vec<Matrix>,
}

impl PreparedGraph {
    pub fn new(graph: &MultiViewGraph) -> Self {
        let raw: Vec<Arc<Csr>> = graph.views().iter().map(|v| Arc::clone(v.adjacency())).collect();
        let normalized = raw.iter().map(|a| Arc::new(a.gcn_normalized())).collect();
        let features = graph.views().iter().map(|v| v.features().clone()).collect();
        Self { n: graph.n(), raw, normalized, features }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Also form the last decoder adjacency `B^{a,L}` (n x n). It does not
    /// feed the reconstruction, so training skips it.
    pub final_decoder_adjacency: bool,
}

/// Encoder outputs. Indexing is `[view][layer]`, where layer `l` holds the
/// level-`l+1` quantity.
#[derive(Clone, Debug)]
pub struct EncodeTrace {
    /// `S^1..S^L`, each `n_{l-1} x n_l`, row-stochastic.
    pub assignments: Vec<Var>,
    /// `M = S^1 ... S^L`.
    pub composed: Var,
    /// `Z^{a,l+1}`.
    pub embeddings: Vec<Vec<Var>>,
    /// `X^{a,l+1} = (S^{l+1})^T Z^{a,l+1}`.
    pub features: Vec<Vec<Var>>,
    /// `A^{a,l+1}`.
    pub adjacency: Vec<Vec<Var>>,
}

impl EncodeTrace {
    /// Fine-level embeddings `Z^{a,1}`, one per view.
    pub fn fine_embeddings(&self) -> Vec<Var> {
        self.embeddings.iter().map(|per_layer| per_layer[0]).collect()
    }
}

#[derive(Clone, Debug)]
pub struct DecodeTrace {
    /// `S_dec^1..S_dec^L`, each `n_{L-l} x n_{L-l-1}`, row-stochastic.
    pub assignments: Vec<Var>,
    /// `H^{a,l+1}`.
    pub hidden: Vec<Vec<Var>>,
    /// `Y^{a,l+1}`.
    pub features: Vec<Vec<Var>>,
    /// `B^{a,l+1}`; the last one only with `final_decoder_adjacency`.
    pub adjacency: Vec<Vec<Var>>,
    /// `X_hat^a`.
    pub reconstructions: Vec<Var>,
}

#[derive(Clone)]
enum Propagator {
    Sparse(Arc<Csr>),
    Dense(Var),
}

fn normalize_dense(tape: &mut Tape, adj: Var) -> Result<Var> {
    let (k, _) = tape.shape(adj);
    let eye = tape.constant(Matrix::identity(k));
    let with_loops = tape.add(adj, eye)?;
    let degree = tape.sum_rows(with_loops)?;
    let inv_sqrt = tape.powf(degree, -0.5)?;
    let inv_sqrt_row = tape.transpose(inv_sqrt)?;
    let scaled = tape.mul_rows_by(with_loops, inv_sqrt)?;
    tape.mul_cols_by(scaled, inv_sqrt_row)
}

fn gcn(tape: &mut Tape, p: &BoundParams, layer: &GcnLayer, prop: &Propagator, x: Var) -> Result<Var> {
    let xw = tape.matmul(x, p.var(layer.weight))?;
    let agg = match prop {
        Propagator::Sparse(a) => tape.sparse_matmul(a, xw)?,
        Propagator::Dense(a) => tape.matmul(*a, xw)?,
    };
    let out = tape.add_row_broadcast(agg, p.var(layer.bias))?;
    match layer.activation {
        Activation::Relu => tape.relu(out),
        Activation::Linear => Ok(out),
    }
}

fn linear(tape: &mut Tape, p: &BoundParams, layer: &Linear, x: Var) -> Result<Var> {
    let xw = tape.matmul(x, p.var(layer.weight))?;
    tape.add_row_broadcast(xw, p.var(layer.bias))
}

fn sum_all(tape: &mut Tape, vars: &[Var]) -> Result<Var> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = tape.add(acc, v)?;
    }
    Ok(acc)
}

fn check_inputs(model: &SigilModel, graph: &PreparedGraph) -> Result<()> {
    let spec = &model.spec;
    if graph.n != spec.nodes || graph.features.len() != spec.views() {
        return Err(SigilError::InvalidConfig(format!(
            "model expects {} nodes and {} views, graph has {} nodes and {} views",
            spec.nodes,
            spec.views(),
            graph.n,
            graph.features.len()
        )));
    }
    for (a, (x, &d)) in graph.features.iter().zip(&spec.feature_dims).enumerate() {
        if x.cols() != d {
            return Err(SigilError::InvalidConfig(format!("view {a}: model width {d}, features have {}", x.cols())));
        }
    }
    Ok(())
}

/// Pooling encoder with adjacency augmentation.
pub fn encode(tape: &mut Tape, model: &SigilModel, p: &BoundParams, graph: &PreparedGraph) -> Result<EncodeTrace> {
    check_inputs(model, graph)?;
    let views = model.spec.views();
    let layers = model.spec.layers();

    let mut x_cur: Vec<Var> = graph.features.iter().map(|x| tape.constant(x.clone())).collect();
    let mut props: Vec<Propagator> = graph.normalized.iter().map(|a| Propagator::Sparse(Arc::clone(a))).collect();
    let mut adj_cur: Vec<Option<Var>> = vec![None; views];

    let mut trace = EncodeTrace {
        assignments: Vec::with_capacity(layers),
        composed: x_cur[0],
        embeddings: vec![Vec::with_capacity(layers); views],
        features: vec![Vec::with_capacity(layers); views],
        adjacency: vec![Vec::with_capacity(layers); views],
    };

    for l in 0..layers {
        let mut logits = Vec::with_capacity(views);
        let mut z = Vec::with_capacity(views);
        for a in 0..views {
            z.push(gcn(tape, p, &model.enc[a][l], &props[a], x_cur[a])?);
            let projected = linear(tape, p, &model.pool_proj[a][l], x_cur[a])?;
            logits.push(gcn(tape, p, &model.pool[l], &props[a], projected)?);
        }
        let total = sum_all(tape, &logits)?;
        let s = tape.row_softmax(total)?;
        let st = tape.transpose(s)?;

        // The augmentation term depends on S only, so it is shared by all views.
        let augmentation = if model.spec.augment {
            let sst = tape.matmul(s, st)?;
            let shifted = tape.add_scalar(sst, -0.5)?;
            let a_hat = tape.sigmoid(shifted)?;
            let a_hat_s = tape.matmul(a_hat, s)?;
            Some(tape.matmul(st, a_hat_s)?)
        } else {
            None
        };

        let mut next_props = Vec::with_capacity(views);
        for a in 0..views {
            let x_next = tape.matmul(st, z[a])?;
            let a_s = match adj_cur[a] {
                None => tape.sparse_matmul(&graph.raw[a], s)?,
                Some(dense) => tape.matmul(dense, s)?,
            };
            let mut coarse = tape.matmul(st, a_s)?;
            if let Some(aug) = augmentation {
                coarse = tape.add(coarse, aug)?;
            }
            trace.embeddings[a].push(z[a]);
            trace.features[a].push(x_next);
            trace.adjacency[a].push(coarse);
            x_cur[a] = x_next;
            adj_cur[a] = Some(coarse);
            if l + 1 < layers {
                next_props.push(Propagator::Dense(normalize_dense(tape, coarse)?));
            }
        }
        props = next_props;
        trace.assignments.push(s);
    }

    let mut m = trace.assignments[0];
    for &s in &trace.assignments[1..] {
        m = tape.matmul(m, s)?;
    }
    trace.composed = m;
    Ok(trace)
}

/// Unpooling decoder, starting from the coarsest encoder level.
pub fn decode(
    tape: &mut Tape,
    model: &SigilModel,
    p: &BoundParams,
    enc: &EncodeTrace,
    opts: ForwardOptions,
) -> Result<DecodeTrace> {
    let views = model.spec.views();
    let layers = model.spec.layers();
    let mut y: Vec<Var> = (0..views).map(|a| *enc.features[a].last().expect("encoded layer")).collect();
    let mut b: Vec<Var> = (0..views).map(|a| *enc.adjacency[a].last().expect("encoded layer")).collect();

    let mut trace = DecodeTrace {
        assignments: Vec::with_capacity(layers),
        hidden: vec![Vec::with_capacity(layers); views],
        features: vec![Vec::with_capacity(layers); views],
        adjacency: vec![Vec::with_capacity(layers); views],
        reconstructions: Vec::with_capacity(views),
    };

    for l in 0..layers {
        let props: Vec<Propagator> =
            b.iter().map(|&adj| normalize_dense(tape, adj).map(Propagator::Dense)).collect::<Result<_>>()?;
        let logits: Vec<Var> =
            (0..views).map(|a| gcn(tape, p, &model.unpool[l], &props[a], y[a])).collect::<Result<_>>()?;
        let total = sum_all(tape, &logits)?;
        let s_dec = match model.spec.decoder_softmax {
            DecoderSoftmax::Fine => tape.row_softmax(total)?,
            DecoderSoftmax::Coarse => {
                let t = tape.transpose(total)?;
                let s = tape.row_softmax(t)?;
                tape.transpose(s)?
            }
        };
        let sdt = tape.transpose(s_dec)?;
        let last = l + 1 == layers;
        for a in 0..views {
            let h = gcn(tape, p, &model.dec[a][l], &props[a], y[a])?;
            let y_next = tape.matmul(sdt, h)?;
            trace.hidden[a].push(h);
            trace.features[a].push(y_next);
            if !last || opts.final_decoder_adjacency {
                let bs = tape.matmul(b[a], s_dec)?;
                let b_next = tape.matmul(sdt, bs)?;
                trace.adjacency[a].push(b_next);
                b[a] = b_next;
            }
            y[a] = y_next;
        }
        trace.assignments.push(s_dec);
    }
    trace.reconstructions = y;
    Ok(trace)
}

/// Binds the parameters and runs encode then decode.
pub fn forward(
    tape: &mut Tape,
    model: &SigilModel,
    graph: &PreparedGraph,
    opts: ForwardOptions,
) -> Result<(BoundParams, EncodeTrace, DecodeTrace)> {
    let bound = model.params.bind(tape);
    let enc = encode(tape, model, &bound, graph)?;
    let dec = decode(tape, model, &bound, &enc, opts)?;
    Ok((bound, enc, dec))
}

/// Plain values of a forward pass, for scoring and invariant checks.
#[derive(Clone, Debug)]
pub struct ForwardValues {
    pub assignments: Vec<Matrix>,
    pub composed: Matrix,
    /// `Z^{a,1}` per view.
    pub fine_embeddings: Vec<Matrix>,
    /// `[view][layer]` encoder adjacencies.
    pub coarse_adjacency: Vec<Vec<Matrix>>,
    pub decoder_assignments: Vec<Matrix>,
    pub decoder_adjacency: Vec<Vec<Matrix>>,
    pub reconstructions: Vec<Matrix>,
}

impl ForwardValues {
    pub fn compute(model: &SigilModel, graph: &PreparedGraph, opts: ForwardOptions) -> Result<Self> {
        let mut tape = Tape::new();
        let (_, enc, dec) = forward(&mut tape, model, graph, opts)?;
        Ok(Self::extract(&tape, &enc, &dec))
    }

    pub fn extract(tape: &Tape, enc: &EncodeTrace, dec: &DecodeTrace) -> Self {
        let vals = |vs: &[Var]| vs.iter().map(|&v| tape.value(v).clone()).collect::<Vec<_>>();
        Self {
            assignments: vals(&enc.assignments),
            composed: tape.value(enc.composed).clone(),
            fine_embeddings: vals(&enc.fine_embeddings()),
            coarse_adjacency: enc.adjacency.iter().map(|v| vals(v)).collect(),
            decoder_assignments: vals(&dec.assignments),
            decoder_adjacency: dec.adjacency.iter().map(|v| vals(v)).collect(),
            reconstructions: vals(&dec.reconstructions),
        }
    }
}

/// Smallest entry of `A^{a,l+1} - S^T A^{a,l} S` over every view and layer,
/// i.e. how much the augmentation added at the least-augmented position.
pub fn augmentation_gap(tape: &Tape, enc: &EncodeTrace, graph: &PreparedGraph) -> f64 {
    let mut worst = f64::INFINITY;
    for (a, per_layer) in enc.adjacency.iter().enumerate() {
        for (l, &coarse) in per_layer.iter().enumerate() {
            let s = tape.value(enc.assignments[l]);
            let a_s = if l == 0 {
                graph.raw[a].matmul_dense(s)
            } else {
                tape.value(per_layer[l - 1]).matmul(s)
            };
            let plain = gemm(s, true, &a_s, false);
            for (x, y) in tape.value(coarse).as_slice().iter().zip(plain.as_slice()) {
                worst = worst.min(x - y);
            }
        }
    }
    worst
}
