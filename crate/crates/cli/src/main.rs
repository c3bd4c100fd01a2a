mod args;
mod error;
mod manifest;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use sigil_core::scoring::{ClusterReduction, MahalanobisConfig, Ridge};
use sigil_core::{InjectionPlan, KeyValues, ScoreNormalizer, SyntheticSpec, TrainConfig};

use args::{CheckKind, Cli, Command, DiagnoseArgs, EvaluateArgs, InjectArgs, ScoreArgs, SynthArgs, TrainArgs};
use error::{CliError, CliResult, Exit};
use manifest::RunManifest;
use run::{
    resolve_train_config, with_suffix, DiagnoseRun, EvaluateRun, InjectRun, LabelSource, Run, ScoreRun, SynthRun,
    TrainRun,
};

fn absolute(p: &Path) -> CliResult<PathBuf> {
    std::path::absolute(p).map_err(|e| CliError::io(format!("cannot resolve {}: {e}", p.display())))
}

fn seed_or_entropy(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random)
}

fn resolve_synth(a: SynthArgs) -> CliResult<Run> {
    let spec = SyntheticSpec {
        n: a.nodes,
        communities: a.communities,
        p_intra: a.p_intra,
        p_inter: a.p_inter,
        feature_dim: a.feature_dim,
        separation: a.separation,
        views: a.views,
        mask_prob: a.mask_prob,
        seed: seed_or_entropy(a.seed),
    };
    spec.validate()?;
    if a.views == 0 {
        return Err(CliError::usage("--views must be >= 1"));
    }
    if !(0.0..1.0).contains(&a.mask_prob) {
        return Err(CliError::usage(format!("--mask-prob must lie in [0, 1), got {}", a.mask_prob)));
    }
    Ok(Run::Synth(SynthRun { spec, out: absolute(&a.out)? }))
}

fn resolve_inject(a: InjectArgs) -> CliResult<Run> {
    let plan = InjectionPlan {
        clique_size: a.clique_size,
        clique_count: a.cliques,
        attr_candidates: a.k,
        attr_count: a.attr,
        seed: seed_or_entropy(a.seed),
    };
    plan.validate()?;
    Ok(Run::Inject(InjectRun { bundle: absolute(&a.bundle)?, plan, out: absolute(&a.out)? }))
}

/// Defaults, then the config file, then `SIGIL_*` variables, then flags.
fn resolve_train(a: TrainArgs) -> CliResult<Run> {
    let mut config = TrainConfig::default();
    let mut seed_given = false;
    let config_file = match &a.config {
        Some(p) => {
            let kv = KeyValues::read(p)?;
            seed_given |= kv.get("seed").is_some();
            config.apply_kv(&kv)?;
            Some(absolute(p)?)
        }
        None => None,
    };
    let from_env = config.apply_env(std::env::vars())?;
    seed_given |= from_env.iter().any(|k| k == "seed");
    let mut pairs: Vec<(String, String)> = Vec::new();
    for s in &a.set {
        let (k, v) = s.split_once('=').ok_or_else(|| CliError::usage(format!("--set expects KEY=VALUE, got `{s}`")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    pairs.extend(a.overrides().into_iter().map(|(k, v)| (k.to_string(), v)));
    seed_given |= pairs.iter().any(|(k, _)| k == "seed");
    config.apply(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    if !seed_given {
        config.seed = rand::random();
    }
    config.validate()?;
    let checkpoint = absolute(&a.out)?;
    let log = match &a.log {
        Some(p) => absolute(p)?,
        None => with_suffix(&checkpoint, ".log"),
    };
    let resolved = config.to_kv().iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    // Round trip so the manifest never records a config that fails to load.
    resolve_train_config(&resolved)?;
    Ok(Run::Train(TrainRun { bundle: absolute(&a.bundle)?, config_file, config: resolved, checkpoint, log }))
}

fn parse_ridge(s: &str) -> CliResult<Ridge> {
    let bad = || CliError::usage(format!("--ridge expects relative:C or absolute:C with C >= 0, got `{s}`"));
    let (kind, value) = s.split_once(':').ok_or_else(bad)?;
    let c: f64 = value.parse().map_err(|_| bad())?;
    if !(c >= 0.0 && c.is_finite()) {
        return Err(bad());
    }
    match kind {
        "relative" => Ok(Ridge::Relative(c)),
        "absolute" => Ok(Ridge::Absolute(c)),
        _ => Err(bad()),
    }
}

fn resolve_score(a: ScoreArgs) -> CliResult<Run> {
    if !(0.0..=1.0).contains(&a.beta) {
        return Err(CliError::usage(format!("--beta must lie in [0, 1], got {}", a.beta)));
    }
    let normalizer: ScoreNormalizer = a.normalizer.parse()?;
    let reduction: ClusterReduction = a.reduction.parse()?;
    let mahalanobis = MahalanobisConfig { ridge: parse_ridge(&a.ridge)?, reduction };
    Ok(Run::Score(ScoreRun {
        bundle: absolute(&a.bundle)?,
        checkpoint: absolute(&a.checkpoint)?,
        beta: a.beta,
        normalizer,
        mahalanobis,
        out: absolute(&a.out)?,
    }))
}

fn resolve_evaluate(a: EvaluateArgs) -> CliResult<Run> {
    let labels = match (&a.labels, &a.bundle) {
        (Some(p), _) => LabelSource::File(absolute(p)?),
        (None, Some(b)) => LabelSource::Bundle(absolute(b)?),
        (None, None) => return Err(CliError::usage("one of --labels or --bundle is required")),
    };
    if a.k.contains(&0) {
        return Err(CliError::usage("--k values must be >= 1"));
    }
    Ok(Run::Evaluate(EvaluateRun { report: absolute(&a.report)?, labels, ks: a.k, format: a.format, out: absolute(&a.out)? }))
}

fn resolve_diagnose(a: DiagnoseArgs) -> CliResult<Run> {
    let mut checks = if a.only.is_empty() {
        vec![CheckKind::Lemma1, CheckKind::Lemma2, CheckKind::Gradient, CheckKind::Complexity]
    } else {
        a.only
    };
    checks.sort();
    checks.dedup();
    if checks.contains(&CheckKind::Complexity) && (a.probe_sizes.len() < 2 || a.probe_sizes.windows(2).any(|w| w[0] >= w[1])) {
        return Err(CliError::usage("--probe-sizes must be strictly ascending with at least two sizes"));
    }
    Ok(Run::Diagnose(DiagnoseRun {
        checks,
        seed: seed_or_entropy(a.seed),
        probe_sizes: a.probe_sizes,
        out: absolute(&a.out)?,
    }))
}

/// Writes the manifest, then runs.
fn launch(run: Run, manifest_path: Option<PathBuf>) -> CliResult<()> {
    let path = match manifest_path {
        Some(p) => absolute(&p)?,
        None => run.default_manifest(),
    };
    let manifest = RunManifest::new(run)?;
    manifest.write(&path)?;
    eprintln!("manifest: {}", path.display());
    manifest.run.execute()
}

fn replay(manifest_path: &Path, output_dir: Option<&Path>) -> CliResult<()> {
    let recorded = RunManifest::read(manifest_path)?;
    let stale = recorded.stale_inputs()?;
    if !stale.is_empty() {
        let list: Vec<String> = stale.iter().map(|p| p.display().to_string()).collect();
        return Err(CliError::check(format!("inputs changed since the manifest was written: {}", list.join(", "))));
    }
    if recorded.version != env!("CARGO_PKG_VERSION") {
        eprintln!("warning: manifest written by sigil {}, replaying with {}", recorded.version, env!("CARGO_PKG_VERSION"));
    }
    let mut run = recorded.run;
    let target = match output_dir {
        Some(dir) => {
            run.redirect(&absolute(dir)?);
            None
        }
        None => Some(absolute(manifest_path)?),
    };
    launch(run, target)
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => {
            let m = a.manifest.manifest.clone();
            launch(resolve_synth(a)?, m)
        }
        Command::Inject(a) => {
            let m = a.manifest.manifest.clone();
            launch(resolve_inject(a)?, m)
        }
        Command::Train(a) => {
            let m = a.manifest.manifest.clone();
            launch(resolve_train(a)?, m)
        }
        Command::Score(a) => {
            let m = a.manifest.manifest.clone();
            launch(resolve_score(a)?, m)
        }
        Command::Evaluate(a) => {
            let m = a.manifest.manifest.clone();
            launch(resolve_evaluate(a)?, m)
        }
        Command::Diagnose(a) => {
            let m = a.manifest.manifest.clone();
            launch(resolve_diagnose(a)?, m)
        }
        Command::Replay(a) => replay(&a.manifest, a.output_dir.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => Exit::Success.into(),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit.into()
        }
    }
}
