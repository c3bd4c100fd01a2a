//! Numerical checks of the loss identities, a finite-difference gradient
//! audit of the full objective, and a per-iteration timing probe.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::benchmark::{generate_synthetic, SyntheticSpec};
use crate::error::{Result, SigilError};
use crate::losses::{
    align_uniform_decomposition, build_similarity_map, objective, similarity_guided_loss, LossConfig, Normalization,
};
use crate::matrix::{gemm, Csr, Matrix};
use crate::model::{forward, ForwardOptions, ModelSpec, PreparedGraph, SigilModel};
use crate::train::{TrainConfig, TrainSession};

/// Whether a check asserts that a property holds or that it is violated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    Holds,
    Violated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub expect: Expectation,
    pub instance: String,
    pub seed: u64,
}

impl CheckResult {
    /// `measured` is compared with `tolerance`; the check passes when the
    /// comparison agrees with `expect`.
    pub fn new(name: &str, measured: f64, tolerance: f64, expect: Expectation, instance: String, seed: u64) -> Self {
        let within = measured.is_finite() && measured <= tolerance;
        let passed = match expect {
            Expectation::Holds => within,
            Expectation::Violated => !within,
        };
        Self { name: name.to_string(), passed, measured, tolerance, expect, instance, seed }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub checks: Vec<CheckResult>,
}

impl DiagnosticReport {
    pub fn push(&mut self, check: CheckResult) {
        self.checks.push(check);
    }

    pub fn extend(&mut self, other: DiagnosticReport) {
        self.checks.extend(other.checks);
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// One block per check, `key = value` lines.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let expect = match c.expect {
                Expectation::Holds => "holds",
                Expectation::Violated => "violated",
            };
            writeln!(s, "[{}]", c.name).unwrap();
            writeln!(s, "status = {}", if c.passed { "pass" } else { "fail" }).unwrap();
            writeln!(s, "measured = {:.6e}", c.measured).unwrap();
            writeln!(s, "tolerance = {:.6e}", c.tolerance).unwrap();
            writeln!(s, "expect = {expect}").unwrap();
            writeln!(s, "seed = {}", c.seed).unwrap();
            writeln!(s, "instance = {}", c.instance).unwrap();
            s.push('\n');
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        writeln!(s, "summary = {} checks, {} failed", self.checks.len(), failed).unwrap();
        s
    }
}

pub const IDENTITY_TOLERANCE: f64 = 1e-8;

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn unit_rows(mut z: Matrix) -> Matrix {
    for i in 0..z.rows() {
        let n = z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        z.row_mut(i).iter_mut().for_each(|v| *v /= n);
    }
    z
}

fn random_assignment(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Matrix {
    let mut m = gaussian(rng, n, k).map(f64::exp);
    for i in 0..n {
        let s: f64 = m.row(i).iter().sum();
        m.row_mut(i).iter_mut().for_each(|v| *v /= s);
    }
    m
}

fn random_adjacency(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Arc<Csr> {
    let mut trip = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random_bool(p) {
                trip.push((i, j, 1.0));
                trip.push((j, i, 1.0));
            }
        }
    }
    Arc::new(Csr::from_triplets(n, &trip))
}

/// `||O - Z Z^T / tau||_F^2` through the training implementation.
fn contrastive_value(o: &Matrix, z: &Matrix, tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let o = tape.constant(o.clone());
    let z = tape.constant(z.clone());
    let l = similarity_guided_loss(&mut tape, o, z, tau)?;
    Ok(tape.value(l).item())
}

fn relative_spread(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let worst = values.iter().map(|v| (v - median).abs()).fold(0.0, f64::max);
    worst / median.abs().max(f64::MIN_POSITIVE)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lemma1Variant {
    /// Unit-row embeddings, one fixed `M`.
    Standard,
    /// Embeddings scaled by 2 after normalization.
    ScaledEmbeddings,
    /// A fresh `M` every trial; constancy should break.
    PerturbedMap,
}

/// Relative spread of `L_c - (align + uniform)` over `trials` random
/// embeddings of an `n`-node instance with `n_l` clusters.
pub fn lemma1_spread(n: usize, n_l: usize, trials: usize, seed: u64, variant: Lemma1Variant) -> Result<f64> {
    if n > 200 || trials < 2 {
        return Err(SigilError::InvalidConfig("lemma 1 check needs n <= 200 and at least 2 trials".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = 1.0;
    let adjs = vec![random_adjacency(&mut rng, n, 0.2), random_adjacency(&mut rng, n, 0.2)];
    let fixed = build_similarity_map(&random_assignment(&mut rng, n, n_l), &adjs, 0.9, Normalization::Symmetric)?;
    let mut diffs = Vec::with_capacity(trials);
    for _ in 0..trials {
        let o = match variant {
            Lemma1Variant::PerturbedMap => {
                build_similarity_map(&random_assignment(&mut rng, n, n_l), &adjs, 0.9, Normalization::Symmetric)?.o
            }
            _ => fixed.o.clone(),
        };
        let mut z = unit_rows(gaussian(&mut rng, n, 8));
        if variant == Lemma1Variant::ScaledEmbeddings {
            z = z.scale(2.0);
        }
        let l_c = contrastive_value(&o, &z, tau)?;
        let (align, uniform) = align_uniform_decomposition(&o, &z, tau)?;
        diffs.push(l_c - (align + uniform));
    }
    Ok(relative_spread(&diffs))
}

/// Constancy of `L_c - L_f` over `seeds` consecutive seeds, plus the scaled
/// and perturbed-map controls.
pub fn verify_lemma1(n: usize, n_l: usize, trials: usize, seed: u64, seeds: u64) -> Result<DiagnosticReport> {
    let mut report = DiagnosticReport::default();
    let inst = |what: &str| format!("n={n} n_L={n_l} trials={trials} {what}");
    let mut worst = (0.0f64, seed);
    for s in seed..seed + seeds {
        let spread = lemma1_spread(n, n_l, trials, s, Lemma1Variant::Standard)?;
        if spread > worst.0 || !spread.is_finite() {
            worst = (spread, s);
        }
    }
    report.push(CheckResult::new("lemma1.constancy", worst.0, IDENTITY_TOLERANCE, Expectation::Holds, inst("unit rows"), worst.1));
    let scaled = lemma1_spread(n, n_l, trials, seed, Lemma1Variant::ScaledEmbeddings)?;
    report.push(CheckResult::new(
        "lemma1.scaled_embeddings",
        scaled,
        IDENTITY_TOLERANCE,
        Expectation::Holds,
        inst("rows of norm 2"),
        seed,
    ));
    let perturbed = lemma1_spread(n, n_l, trials, seed, Lemma1Variant::PerturbedMap)?;
    report.push(CheckResult::new(
        "lemma1.perturbed_map_control",
        perturbed,
        IDENTITY_TOLERANCE,
        Expectation::Violated,
        inst("fresh M per trial"),
        seed,
    ));
    Ok(report)
}

/// Residuals of the spectral form for one map normalization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lemma2Residuals {
    /// `|L_c - [C + (2/tau) Tr(Z^T L Z) + (1/tau^2) ||Z Z^T||^2]|`, worst trial.
    pub identity: f64,
    /// `|sum_ij o_ij ||z_i - z_j||^2 - 2 Tr(Z^T L Z)|`, worst trial. This is the
    /// Laplacian step that needs every row of `O` to sum to 1.
    pub laplacian_step: f64,
}

pub fn lemma2_residuals(n: usize, trials: usize, tau: f64, seed: u64, normalization: Normalization) -> Result<Lemma2Residuals> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let adjs = vec![random_adjacency(&mut rng, n, 0.25), random_adjacency(&mut rng, n, 0.25)];
    let map = build_similarity_map(&random_assignment(&mut rng, n, 4), &adjs, 0.9, normalization)?;
    let o = &map.o;
    let c = o.frobenius_sq() - 2.0 * n as f64 / tau;
    let mut out = Lemma2Residuals { identity: 0.0, laplacian_step: 0.0 };
    for _ in 0..trials {
        let z = unit_rows(gaussian(&mut rng, n, 6));
        let gram = gemm(&z, false, &z, true);
        let trace_zz: f64 = (0..n).map(|i| gram.get(i, i)).sum();
        let trace_zoz: f64 = o.as_slice().iter().zip(gram.as_slice()).map(|(a, b)| a * b).sum();
        let trace_lap = trace_zz - trace_zoz;
        let rhs = c + 2.0 / tau * trace_lap + gram.frobenius_sq() / (tau * tau);
        let l_c = contrastive_value(o, &z, tau)?;
        let mut pairwise = 0.0;
        for i in 0..n {
            for j in 0..n {
                let d: f64 = z.row(i).iter().zip(z.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                pairwise += o.get(i, j) * d;
            }
        }
        out.identity = out.identity.max((l_c - rhs).abs());
        out.laplacian_step = out.laplacian_step.max((pairwise - 2.0 * trace_lap).abs());
    }
    Ok(out)
}

/// Spectral form under the row-normalized map, and the symmetric-map control.
pub fn verify_lemma2(n: usize, trials: usize, tau: f64, seed: u64) -> Result<DiagnosticReport> {
    let mut report = DiagnosticReport::default();
    let row = lemma2_residuals(n, trials, tau, seed, Normalization::Row)?;
    let sym = lemma2_residuals(n, trials, tau, seed, Normalization::Symmetric)?;
    let inst = |norm: &str| format!("n={n} trials={trials} tau={tau} O={norm}");
    report.push(CheckResult::new(
        "lemma2.row_map",
        row.identity.max(row.laplacian_step),
        IDENTITY_TOLERANCE,
        Expectation::Holds,
        inst("row"),
        seed,
    ));
    report.push(CheckResult::new(
        "lemma2.symmetric_map_control",
        sym.identity.max(sym.laplacian_step),
        IDENTITY_TOLERANCE,
        Expectation::Violated,
        inst("symmetric"),
        seed,
    ));
    Ok(report)
}

/// Tiny instance for the gradient audit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditSpec {
    pub nodes: usize,
    pub views: usize,
    pub feature_dim: usize,
    pub hidden: usize,
    pub clusters: Vec<usize>,
    pub loss: LossConfig,
    pub step: f64,
    pub seed: u64,
}

impl Default for AuditSpec {
    fn default() -> Self {
        Self {
            nodes: 20,
            views: 2,
            feature_dim: 4,
            hidden: 6,
            clusters: vec![3],
            loss: LossConfig::default(),
            step: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditOutcome {
    pub entries: usize,
    pub worst_parameter: String,
    pub worst_entry: (usize, usize),
    pub worst_error: f64,
    pub failures: usize,
    pub objective: f64,
    pub abs_floor: f64,
}

pub const GRADIENT_REL_TOLERANCE: f64 = 1e-4;
pub const GRADIENT_ABS_FLOOR: f64 = 1e-7;

/// `|a - f| / max(|a|, |f|)`, or 0 when the absolute gap is under `floor`.
pub fn gradient_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let gap = (analytic - numeric).abs();
    if gap <= floor {
        0.0
    } else {
        gap / analytic.abs().max(numeric.abs())
    }
}

/// Compares every parameter gradient of `J` with central differences.
/// `tamper` may alter the analytic gradients before comparison.
pub fn gradient_audit_with(spec: &AuditSpec, tamper: impl FnOnce(&mut [Matrix])) -> Result<AuditOutcome> {
    if spec.nodes > 30 || spec.hidden > 8 || spec.feature_dim > 8 {
        return Err(SigilError::InvalidConfig("gradient audit expects n <= 30 and widths <= 8".into()));
    }
    let graph = generate_synthetic(&SyntheticSpec {
        n: spec.nodes,
        communities: spec.clusters[0].min(spec.nodes / 2).max(2),
        p_intra: 0.4,
        p_inter: 0.05,
        feature_dim: spec.feature_dim,
        views: spec.views,
        seed: spec.seed,
        ..Default::default()
    })?;
    let prepared = PreparedGraph::new(&graph);
    let model_spec = ModelSpec::new(spec.nodes, graph.feature_dims(), spec.hidden, spec.clusters.clone());
    let mut model = SigilModel::initialize(model_spec, spec.seed)?;

    // With a detached map the training gradient treats O as fixed at the
    // current M, so the reference function freezes M at the base point.
    let frozen = if spec.loss.differentiable_map {
        None
    } else {
        Some(crate::model::ForwardValues::compute(&model, &prepared, ForwardOptions::default())?.composed)
    };
    let eval = |model: &SigilModel, with_grad: bool| -> Result<(f64, Vec<Matrix>)> {
        let mut tape = Tape::new();
        let (bound, enc, dec) = forward(&mut tape, model, &prepared, ForwardOptions::default())?;
        let xs: Vec<_> = prepared.features.iter().map(|x| tape.constant(x.clone())).collect();
        let composed = match (&frozen, with_grad) {
            (Some(m), false) => tape.constant(m.clone()),
            _ => enc.composed,
        };
        let terms = objective(
            &mut tape,
            &spec.loss,
            &xs,
            &dec.reconstructions,
            &enc.fine_embeddings(),
            composed,
            &prepared.raw,
            None,
        )?;
        let value = tape.value(terms.objective).item();
        if !with_grad {
            return Ok((value, Vec::new()));
        }
        let mut grads = tape.backward(terms.objective)?;
        Ok((value, bound.vars().iter().map(|&v| grads.take(v)).collect()))
    };

    let (j0, mut analytic) = eval(&model, true)?;
    tamper(&mut analytic);
    let h = spec.step;
    // A central difference cannot resolve less than the roundoff in J / h.
    let floor = GRADIENT_ABS_FLOOR.max(16.0 * f64::EPSILON * j0.abs() / h);
    let mut out = AuditOutcome { entries: 0, worst_parameter: String::new(), worst_entry: (0, 0), worst_error: 0.0, failures: 0, objective: j0, abs_floor: floor };
    for p in 0..model.params.len() {
        let (rows, cols) = model.params.as_slice()[p].value.shape();
        for r in 0..rows {
            for c in 0..cols {
                let base = model.params.as_slice()[p].value.get(r, c);
                model.params.as_mut_slice()[p].value.set(r, c, base + h);
                let (plus, _) = eval(&model, false)?;
                model.params.as_mut_slice()[p].value.set(r, c, base - h);
                let (minus, _) = eval(&model, false)?;
                model.params.as_mut_slice()[p].value.set(r, c, base);
                let numeric = (plus - minus) / (2.0 * h);
                let err = gradient_error(analytic[p].get(r, c), numeric, floor);
                out.entries += 1;
                if !(err < GRADIENT_REL_TOLERANCE) {
                    out.failures += 1;
                }
                if !(err <= out.worst_error) {
                    out.worst_error = err;
                    out.worst_parameter = model.params.as_slice()[p].name.clone();
                    out.worst_entry = (r, c);
                }
            }
        }
    }
    Ok(out)
}

pub fn gradient_audit(spec: &AuditSpec) -> Result<AuditOutcome> {
    gradient_audit_with(spec, |_| {})
}

pub fn gradient_audit_check(spec: &AuditSpec) -> Result<CheckResult> {
    let o = gradient_audit(spec)?;
    Ok(CheckResult::new(
        "gradient_audit",
        o.worst_error,
        GRADIENT_REL_TOLERANCE,
        Expectation::Holds,
        format!(
            "n={} views={} hidden={} clusters={:?} variant={} entries={} J={:.6e} abs_floor={:.3e} worst={}[{},{}]",
            spec.nodes,
            spec.views,
            spec.hidden,
            spec.clusters,
            spec.loss.variant,
            o.entries,
            o.objective,
            o.abs_floor,
            o.worst_parameter,
            o.worst_entry.0,
            o.worst_entry.1
        ),
        spec.seed,
    ))
}

/// Fixed architecture and graph family for the timing probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub feature_dim: usize,
    pub hidden: usize,
    pub clusters: Vec<usize>,
    /// Expected node degree, held constant as `n` grows.
    pub expected_degree: f64,
    /// `None` uses the full similarity map.
    pub pair_sample: Option<usize>,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { feature_dim: 256, hidden: 100, clusters: vec![5], expected_degree: 10.0, pair_sample: None, repetitions: 9, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    /// `(n, fastest seconds per iteration)`.
    pub points: Vec<(usize, f64)>,
    pub slope: f64,
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(usize, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Fastest wall time of one training iteration at each size, after one
/// warmup iteration, and the fitted log-log slope. Sizes are timed
/// round-robin so a slow phase of the machine hits all of them, and the
/// minimum is kept because scheduler noise only ever adds time.
pub fn complexity_probe(sizes: &[usize], config: &ProbeConfig) -> Result<ProbeOutcome> {
    if sizes.len() < 2 || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SigilError::InvalidConfig("probe sizes must be strictly ascending, at least two".into()));
    }
    if config.repetitions == 0 {
        return Err(SigilError::InvalidConfig("probe needs at least one repetition".into()));
    }
    let mut sessions = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let communities = config.clusters[0].max(2);
        // Within-community degree carries 90% of the expected degree.
        let block = n as f64 / communities as f64;
        let p_intra = (0.9 * config.expected_degree / block).min(1.0);
        let p_inter = (0.1 * config.expected_degree / (n as f64 - block)).min(1.0);
        let graph = generate_synthetic(&SyntheticSpec {
            n,
            communities,
            p_intra,
            p_inter,
            feature_dim: config.feature_dim,
            seed: config.seed,
            ..Default::default()
        })?;
        let mut train = TrainConfig {
            iterations: config.repetitions + 1,
            hidden: config.hidden,
            clusters: config.clusters.clone(),
            seed: config.seed,
            ..Default::default()
        };
        train.loss.pair_sample_size = config.pair_sample.unwrap_or(n).min(n);
        let mut session = TrainSession::new(&graph, train)?;
        session.step()?;
        sessions.push(session);
    }
    let mut best = vec![f64::INFINITY; sizes.len()];
    for _ in 0..config.repetitions {
        for (session, b) in sessions.iter_mut().zip(&mut best) {
            *b = b.min(session.step()?.seconds);
        }
    }
    let points: Vec<(usize, f64)> = sizes.iter().copied().zip(best).collect();
    let slope = loglog_slope(&points);
    Ok(ProbeOutcome { points, slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossVariant;

    #[test]
    fn lemma1_holds_and_controls_behave() {
        let r = verify_lemma1(30, 5, 20, 0, 2).unwrap();
        assert!(r.all_passed(), "{}", r.render());
        assert!(lemma1_spread(30, 5, 20, 0, Lemma1Variant::PerturbedMap).unwrap() > 1e-4);
    }

    #[test]
    fn lemma2_row_map_holds_symmetric_map_breaks_laplacian_step() {
        let row = lemma2_residuals(20, 10, 1.0, 3, Normalization::Row).unwrap();
        assert!(row.identity < 1e-10 && row.laplacian_step < 1e-10, "{row:?}");
        let sym = lemma2_residuals(20, 10, 1.0, 3, Normalization::Symmetric).unwrap();
        // The expanded identity is pure algebra and survives any O; the
        // Laplacian rewrite is what needs unit row sums.
        assert!(sym.identity < 1e-10);
        assert!(sym.laplacian_step > 1e-3);
        let r = verify_lemma2(20, 10, 0.5, 1).unwrap();
        assert!(r.all_passed(), "{}", r.render());
    }

    #[test]
    fn trace_cyclicity_with_orthonormal_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 4;
        let adjs = vec![random_adjacency(&mut rng, n, 0.5)];
        let o = build_similarity_map(&random_assignment(&mut rng, n, 2), &adjs, 0.5, Normalization::Row).unwrap().o;
        let z = Matrix::from_fn(n, 6, |i, j| if i == j { 1.0 } else { 0.0 });
        let l = Matrix::identity(n).zip_map(&o, |a, b| a - b);
        let lhs: f64 = {
            let zl = gemm(&z, true, &gemm(&l, false, &z, false), false);
            (0..6).map(|i| zl.get(i, i)).sum()
        };
        let trace_l: f64 = (0..n).map(|i| l.get(i, i)).sum();
        assert!((lhs - trace_l).abs() < 1e-14);
    }

    #[test]
    fn audit_passes_on_every_loss_variant() {
        for variant in [LossVariant::SimilarityGuided, LossVariant::ClusteringL1, LossVariant::PlainL2, LossVariant::None] {
            let spec = AuditSpec {
                nodes: 12,
                hidden: 4,
                feature_dim: 3,
                loss: LossConfig { variant, ..Default::default() },
                ..Default::default()
            };
            let o = gradient_audit(&spec).unwrap();
            assert_eq!(o.failures, 0, "{variant}: {o:?}");
        }
    }

    #[test]
    fn audit_covers_the_live_map_and_zero_lambda() {
        for loss in [LossConfig { differentiable_map: true, ..Default::default() }, LossConfig { lambda: 0.0, ..Default::default() }]
        {
            let spec = AuditSpec { nodes: 10, hidden: 4, feature_dim: 3, loss, ..Default::default() };
            assert_eq!(gradient_audit(&spec).unwrap().failures, 0);
        }
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let spec = AuditSpec { nodes: 10, hidden: 4, feature_dim: 3, ..Default::default() };
        let o = gradient_audit_with(&spec, |g| {
            let v = g[0].get(0, 0);
            g[0].set(0, 0, v * 1.01 + 1e-3);
        })
        .unwrap();
        assert_eq!(o.failures, 1);
        assert_eq!(o.worst_entry, (0, 0));
    }

    #[test]
    fn slope_fit_recovers_power_laws() {
        for k in [1.0, 2.0] {
            let pts: Vec<(usize, f64)> = [250usize, 500, 1000, 2000].iter().map(|&n| (n, 3e-6 * (n as f64).powf(k))).collect();
            assert!((loglog_slope(&pts) - k).abs() < 1e-12);
        }
    }

    #[test]
    fn report_render_names_tolerance_and_seed() {
        let mut r = DiagnosticReport::default();
        r.push(CheckResult::new("x", 1e-3, 1e-8, Expectation::Violated, "inst".into(), 7));
        let text = r.render();
        assert!(text.contains("status = pass") && text.contains("tolerance = 1.000000e-8") && text.contains("seed = 7"));
        assert!(r.all_passed());
    }
}
