//! Fully resolved commands and their execution.
//!
//! Every field a command depends on is materialized here, so a serialized
//! [`Run`] replays without consulting flags, config files or the environment.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sigil_core::benchmark::generate_synthetic;
use sigil_core::diagnostics::{
    complexity_probe, gradient_audit_check, verify_lemma1, verify_lemma2, AuditSpec, CheckResult, Expectation,
    ProbeConfig,
};
use sigil_core::graph::bundle::{load_bundle, save_bundle, BundleManifest, MANIFEST_NAME};
use sigil_core::graph::io::read_labels;
use sigil_core::model::load_checkpoint;
use sigil_core::{
    score_model, train, AnomalyLabels, DiagnosticReport, InjectionPlan, MahalanobisConfig, MetricReport,
    PreparedGraph, ScoreNormalizer, ScoreReport, SyntheticSpec, TrainConfig, TrainOutputs,
};

use crate::args::{CheckKind, MetricFormat};
use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Run {
    Synth(SynthRun),
    Inject(InjectRun),
    Train(TrainRun),
    Score(ScoreRun),
    Evaluate(EvaluateRun),
    Diagnose(DiagnoseRun),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthRun {
    pub spec: SyntheticSpec,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectRun {
    pub bundle: PathBuf,
    pub plan: InjectionPlan,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub bundle: PathBuf,
    /// Config file the keys were read from, kept for provenance only.
    pub config_file: Option<PathBuf>,
    /// Every config key with its resolved value.
    pub config: BTreeMap<String, String>,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRun {
    pub bundle: PathBuf,
    pub checkpoint: PathBuf,
    pub beta: f64,
    pub normalizer: ScoreNormalizer,
    pub mahalanobis: MahalanobisConfig,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    File(PathBuf),
    Bundle(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluateRun {
    pub report: PathBuf,
    pub labels: LabelSource,
    pub ks: Vec<usize>,
    pub format: MetricFormat,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseRun {
    pub checks: Vec<CheckKind>,
    pub seed: u64,
    pub probe_sizes: Vec<usize>,
    pub out: PathBuf,
}

/// `path` with `suffix` appended to the file name.
pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn bundle_files(bundle: &Path) -> CliResult<Vec<PathBuf>> {
    let (dir, m) = BundleManifest::read(bundle)?;
    let file = if bundle.is_dir() { bundle.join(MANIFEST_NAME) } else { bundle.to_path_buf() };
    Ok(std::iter::once(file).chain(m.resolved_files(&dir)).collect())
}

fn moved(path: &Path, dir: &Path) -> PathBuf {
    dir.join(path.file_name().unwrap_or(path.as_os_str()))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

impl Run {
    pub fn seed(&self) -> Option<u64> {
        match self {
            Run::Synth(r) => Some(r.spec.seed),
            Run::Inject(r) => Some(r.plan.seed),
            Run::Train(r) => r.config.get("seed").and_then(|s| s.parse().ok()),
            Run::Diagnose(r) => Some(r.seed),
            Run::Score(_) | Run::Evaluate(_) => None,
        }
    }

    pub fn inputs(&self) -> CliResult<Vec<PathBuf>> {
        Ok(match self {
            Run::Synth(_) | Run::Diagnose(_) => Vec::new(),
            Run::Inject(r) => bundle_files(&r.bundle)?,
            Run::Train(r) => {
                let mut v = bundle_files(&r.bundle)?;
                v.extend(r.config_file.clone());
                v
            }
            Run::Score(r) => {
                let mut v = bundle_files(&r.bundle)?;
                v.push(r.checkpoint.clone());
                v
            }
            Run::Evaluate(r) => {
                let mut v = vec![r.report.clone()];
                match &r.labels {
                    LabelSource::File(p) => v.push(p.clone()),
                    LabelSource::Bundle(b) => v.extend(bundle_files(b)?),
                }
                v
            }
        })
    }

    pub fn outputs(&self) -> Vec<PathBuf> {
        match self {
            Run::Synth(SynthRun { out, .. }) | Run::Inject(InjectRun { out, .. }) => vec![out.clone()],
            Run::Train(r) => vec![r.checkpoint.clone(), r.log.clone()],
            Run::Score(ScoreRun { out, .. }) | Run::Evaluate(EvaluateRun { out, .. }) => vec![out.clone()],
            Run::Diagnose(r) => vec![r.out.clone()],
        }
    }

    /// Where the manifest goes when the user does not say.
    pub fn default_manifest(&self) -> PathBuf {
        match self {
            Run::Synth(SynthRun { out, .. }) | Run::Inject(InjectRun { out, .. }) => out.join("run.manifest.json"),
            Run::Train(r) => with_suffix(&r.checkpoint, ".manifest.json"),
            Run::Score(ScoreRun { out, .. }) | Run::Evaluate(EvaluateRun { out, .. }) => {
                with_suffix(out, ".manifest.json")
            }
            Run::Diagnose(r) => with_suffix(&r.out, ".manifest.json"),
        }
    }

    /// Moves every output into `dir`, keeping file names.
    pub fn redirect(&mut self, dir: &Path) {
        match self {
            Run::Synth(SynthRun { out, .. }) | Run::Inject(InjectRun { out, .. }) => *out = moved(out, dir),
            Run::Train(r) => {
                r.checkpoint = moved(&r.checkpoint, dir);
                r.log = moved(&r.log, dir);
            }
            Run::Score(ScoreRun { out, .. }) | Run::Evaluate(EvaluateRun { out, .. }) => *out = moved(out, dir),
            Run::Diagnose(r) => r.out = moved(&r.out, dir),
        }
    }

    pub fn execute(&self) -> CliResult<()> {
        match self {
            Run::Synth(r) => synth(r),
            Run::Inject(r) => inject(r),
            Run::Train(r) => train_run(r),
            Run::Score(r) => score(r),
            Run::Evaluate(r) => evaluate(r),
            Run::Diagnose(r) => diagnose(r),
        }
    }
}

fn synth(r: &SynthRun) -> CliResult<()> {
    let graph = generate_synthetic(&r.spec)?;
    let n = graph.n();
    let graph = graph.with_labels(AnomalyLabels::empty(n))?;
    save_bundle(&graph, &r.out)?;
    eprintln!("synth: {} nodes, {} views, {} edges -> {}", n, graph.num_views(), graph.view(0).edge_count(), r.out.display());
    Ok(())
}

fn inject(r: &InjectRun) -> CliResult<()> {
    let graph = load_bundle(&r.bundle)?;
    let out = r.plan.apply(&graph)?;
    save_bundle(&out, &r.out)?;
    let count = out.labels().map_or(0, AnomalyLabels::count);
    eprintln!("inject: {count} labeled anomalies -> {}", r.out.display());
    Ok(())
}

pub fn resolve_train_config(config: &BTreeMap<String, String>) -> CliResult<TrainConfig> {
    let mut c = TrainConfig::default();
    c.apply(config.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    c.validate()?;
    Ok(c)
}

fn train_run(r: &TrainRun) -> CliResult<()> {
    let config = resolve_train_config(&r.config)?;
    let graph = load_bundle(&r.bundle)?;
    let outputs = TrainOutputs { checkpoint: Some(r.checkpoint.clone()) };
    if let Some(dir) = r.checkpoint.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))?;
    }
    let start = Instant::now();
    let (_, log) = train(&graph, &config, &outputs, |s| {
        eprintln!(
            "iter={} J={:.6e} L_r={:.6e} L_c={:.6e} elapsed={:.1}s",
            s.iteration,
            s.objective,
            s.reconstruction,
            s.contrastive,
            start.elapsed().as_secs_f64()
        );
    })?;
    write_text(&r.log, &log.render())?;
    eprintln!("train: {} iterations in {:.1}s -> {}", config.iterations, start.elapsed().as_secs_f64(), r.checkpoint.display());
    Ok(())
}

fn score(r: &ScoreRun) -> CliResult<()> {
    let graph = load_bundle(&r.bundle)?;
    let model = load_checkpoint(&r.checkpoint)?;
    if model.spec.nodes != graph.n() || model.spec.feature_dims != graph.feature_dims() {
        return Err(CliError::usage(format!(
            "checkpoint expects {} nodes with feature widths {:?}, bundle has {} nodes with {:?}",
            model.spec.nodes,
            model.spec.feature_dims,
            graph.n(),
            graph.feature_dims()
        )));
    }
    let (report, warnings) = score_model(&model, &PreparedGraph::new(&graph), r.beta, r.normalizer, r.mahalanobis)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    if let Some(dir) = r.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))?;
    }
    report.write(&r.out)?;
    eprintln!("score: {} nodes -> {}", report.len(), r.out.display());
    Ok(())
}

fn evaluate(r: &EvaluateRun) -> CliResult<()> {
    let report = ScoreReport::read(&r.report)?;
    let labels = match &r.labels {
        LabelSource::File(p) => read_labels(p, report.len())?,
        LabelSource::Bundle(b) => load_bundle(b)?
            .labels()
            .cloned()
            .ok_or_else(|| CliError::usage(format!("bundle {} has no labels", b.display())))?,
    };
    if labels.len() != report.len() {
        return Err(CliError::usage(format!("{} labels but the report scores {} nodes", labels.len(), report.len())));
    }
    let metrics = MetricReport::evaluate(&report.combined, &report.ranking, labels.flags(), &r.ks)?;
    let text = match r.format {
        MetricFormat::Text => metrics.render_text(),
        MetricFormat::Json => metrics.render_json(),
    };
    write_text(&r.out, &text)?;
    print!("{text}");
    Ok(())
}

/// Slope band check: passes when `|slope - center| <= half_width`.
fn slope_check(name: &str, sizes: &[usize], config: &ProbeConfig, center: f64, half_width: f64) -> CliResult<CheckResult> {
    let outcome = complexity_probe(sizes, config)?;
    let points: Vec<String> = outcome.points.iter().map(|(n, t)| format!("{n}:{t:.4e}s")).collect();
    Ok(CheckResult::new(
        name,
        (outcome.slope - center).abs(),
        half_width,
        Expectation::Holds,
        format!("slope={:.3} band=[{}, {}] points={}", outcome.slope, center - half_width, center + half_width, points.join(",")),
        config.seed,
    ))
}

pub fn run_checks(checks: &[CheckKind], seed: u64, probe_sizes: &[usize]) -> CliResult<DiagnosticReport> {
    let mut report = DiagnosticReport::default();
    for check in checks {
        match check {
            CheckKind::Lemma1 => report.extend(verify_lemma1(30, 5, 100, seed, 5)?),
            CheckKind::Lemma2 => report.extend(verify_lemma2(20, 50, 1.0, seed)?),
            CheckKind::Gradient => report.push(gradient_audit_check(&AuditSpec { seed, ..AuditSpec::default() })?),
            CheckKind::Complexity => {
                let full = ProbeConfig { seed, ..ProbeConfig::default() };
                report.push(slope_check("complexity.full_map", probe_sizes, &full, 2.0, 0.4)?);
                let sampled = ProbeConfig { pair_sample: Some(256), ..full };
                report.push(slope_check("complexity.sampled_256", probe_sizes, &sampled, 1.2, 0.4)?);
            }
        }
    }
    Ok(report)
}

fn diagnose(r: &DiagnoseRun) -> CliResult<()> {
    let report = run_checks(&r.checks, r.seed, &r.probe_sizes)?;
    let text = report.render();
    write_text(&r.out, &text)?;
    print!("{text}");
    verdict(&report)
}

fn verdict(report: &DiagnosticReport) -> CliResult<()> {
    if report.all_passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        Err(CliError::check(format!("failed checks: {}", failed.join(", "))))
    }
}
