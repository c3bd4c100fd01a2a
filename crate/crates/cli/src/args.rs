use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "sigil", version, about = "Multi-view graph anomaly detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a stochastic block model graph bundle.
    Synth(SynthArgs),
    /// Inject clique and attribute anomalies into a bundle.
    Inject(InjectArgs),
    /// Train a model on a bundle and write a checkpoint.
    Train(TrainArgs),
    /// Score every node with a trained checkpoint.
    Score(ScoreArgs),
    /// AUC and Recall@K of a score report against labels.
    Evaluate(EvaluateArgs),
    /// Run the numerical self-checks.
    Diagnose(DiagnoseArgs),
    /// Re-run a command from its run manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct ManifestArg {
    /// Where to write the run manifest [default: next to the main output]
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output bundle directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 300)]
    pub nodes: usize,
    #[arg(long, default_value_t = 3)]
    pub communities: usize,
    #[arg(long, default_value_t = 0.1)]
    pub p_intra: f64,
    #[arg(long, default_value_t = 0.01)]
    pub p_inter: f64,
    #[arg(long, default_value_t = 16)]
    pub feature_dim: usize,
    /// Scale of the per-community feature means.
    #[arg(long, default_value_t = 1.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 2)]
    pub views: usize,
    /// Probability of masking each feature entry in a derived view.
    #[arg(long, default_value_t = 0.05)]
    pub mask_prob: f64,
    /// Drawn from entropy when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub manifest: ManifestArg,
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    /// Input bundle (directory or manifest file).
    #[arg(long)]
    pub bundle: PathBuf,
    /// Output bundle directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 15)]
    pub clique_size: usize,
    #[arg(long, default_value_t = 0)]
    pub cliques: usize,
    /// Number of attribute anomalies.
    #[arg(long, default_value_t = 0)]
    pub attr: usize,
    /// Donor candidates drawn per attribute anomaly.
    #[arg(long, default_value_t = 50)]
    pub k: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub manifest: ManifestArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Training log path [default: <out>.log]
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// Supernode counts per layer, e.g. `20` or `20,5`.
    #[arg(long)]
    pub clusters: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub pair_sample: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub loss_variant: Option<String>,
    #[arg(long)]
    pub normalization: Option<String>,
    #[arg(long)]
    pub differentiable_map: Option<bool>,
    #[arg(long)]
    pub decoder_softmax: Option<String>,
    #[arg(long)]
    pub log_interval: Option<usize>,
    #[arg(long)]
    pub checkpoint_interval: Option<usize>,
    #[command(flatten)]
    pub manifest: ManifestArg,
}

impl TrainArgs {
    /// Flag values as config key/value pairs.
    pub fn overrides(&self) -> Vec<(&'static str, String)> {
        fn put<T: ToString>(v: &mut Vec<(&'static str, String)>, key: &'static str, x: &Option<T>) {
            if let Some(x) = x {
                v.push((key, x.to_string()));
            }
        }
        let mut v = Vec::new();
        put(&mut v, "iterations", &self.iterations);
        put(&mut v, "lr", &self.lr);
        put(&mut v, "weight_decay", &self.weight_decay);
        put(&mut v, "hidden", &self.hidden);
        put(&mut v, "layers", &self.layers);
        put(&mut v, "clusters", &self.clusters);
        put(&mut v, "lambda", &self.lambda);
        put(&mut v, "alpha", &self.alpha);
        put(&mut v, "beta", &self.beta);
        put(&mut v, "tau", &self.tau);
        put(&mut v, "pair_sample", &self.pair_sample);
        put(&mut v, "seed", &self.seed);
        put(&mut v, "loss_variant", &self.loss_variant);
        put(&mut v, "normalization", &self.normalization);
        put(&mut v, "differentiable_map", &self.differentiable_map);
        put(&mut v, "decoder_softmax", &self.decoder_softmax);
        put(&mut v, "log_interval", &self.log_interval);
        put(&mut v, "checkpoint_interval", &self.checkpoint_interval);
        v
    }
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Score report path.
    #[arg(long)]
    pub out: PathBuf,
    /// Weight of the cluster score, in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    pub beta: f64,
    /// zscore, minmax or none.
    #[arg(long, default_value = "zscore")]
    pub normalizer: String,
    /// min_of_sum or sum_of_min.
    #[arg(long, default_value = "min_of_sum")]
    pub reduction: String,
    /// Covariance ridge, `relative:C` or `absolute:C`.
    #[arg(long, default_value = "relative:1e-4")]
    pub ridge: String,
    #[command(flatten)]
    pub manifest: ManifestArg,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Score report from `sigil score`.
    #[arg(long)]
    pub report: PathBuf,
    /// Label file, one 0/1 per line.
    #[arg(long, conflicts_with = "bundle", required_unless_present = "bundle")]
    pub labels: Option<PathBuf>,
    /// Take labels from a bundle instead.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Comma-separated K values for Recall@K.
    #[arg(long, value_delimiter = ',', default_value = "50")]
    pub k: Vec<usize>,
    /// Metric report path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = MetricFormat::Text)]
    pub format: MetricFormat,
    #[command(flatten)]
    pub manifest: ManifestArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricFormat {
    Text,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Lemma1,
    Lemma2,
    Gradient,
    Complexity,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Run every check (the default).
    #[arg(long, conflicts_with = "only")]
    pub all: bool,
    /// Comma-separated subset of checks.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub only: Vec<CheckKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Graph sizes for the timing probe.
    #[arg(long, value_delimiter = ',', default_value = "250,500,1000,2000")]
    pub probe_sizes: Vec<usize>,
    /// Report path.
    #[arg(long, default_value = "diagnostics.txt")]
    pub out: PathBuf,
    #[command(flatten)]
    pub manifest: ManifestArg,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Run manifest to replay.
    pub manifest: PathBuf,
    /// Write outputs into this directory instead of their recorded paths.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}
