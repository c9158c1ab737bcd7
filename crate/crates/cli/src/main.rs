use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config_file;
mod metadata;
mod output;

const THREADS_ENV: &str = "GRCL_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "grcl",
    version,
    about = "Graph recommenders trained with contrastive Laplacian objectives"
)]
struct Cli {
    /// Worker threads for parallel sections (defaults to $GRCL_THREADS, then all cores).
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a recommender or pre-train node embeddings.
    Train(TrainArgs),
    /// Score a saved recommender on a held-out split.
    Eval(EvalArgs),
    /// Audit the BPR/COLES sandwich bounds on sampled batches.
    AuditBounds(AuditArgs),
    /// Compare analytic and finite-difference gradients of a training step.
    GradCheck(GradCheckArgs),
    /// Relative influence of a node on its own encoder output.
    Influence(InfluenceArgs),
    /// Generate synthetic datasets.
    GenSynth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
enum Task {
    Rec,
    NodeCls,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
enum LossArg {
    Bpr,
    Coles,
    GrColes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
enum VariantArg {
    LayerAverage,
    SelfloopLast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
enum NormalizeArg {
    On,
    Off,
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
enum RefreshArg {
    Once,
    PerEpoch,
}

#[derive(Debug, Args, serde::Serialize)]
#[command(args_override_self = true)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "rec")]
    task: Task,
    #[arg(long, value_enum, default_value = "gr-coles")]
    loss: LossArg,
    /// Interaction file (rec) or graph directory (node-cls).
    #[arg(long)]
    data: PathBuf,
    /// Embedding width [default: 64 rec, 512 node-cls].
    #[arg(long)]
    dim: Option<usize>,
    /// Propagation layers [default: 3 rec, 2 node-cls].
    #[arg(long)]
    layers: Option<usize>,
    /// [default: 50 rec, 100 node-cls]
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 2048)]
    batch: usize,
    #[arg(long, default_value_t = 1)]
    neg_k: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    beta: f64,
    #[arg(long, default_value_t = 2.0)]
    t: f64,
    #[arg(long, default_value_t = 1e-4)]
    lambda: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value = "layer-average")]
    variant: VariantArg,
    #[arg(long, value_enum, default_value = "auto")]
    normalize: NormalizeArg,
    /// Model file (rec) or embedding CSV (node-cls).
    #[arg(long)]
    out: PathBuf,
    /// Evaluate every N epochs (0 disables).
    #[arg(long, default_value_t = 1)]
    eval_every: usize,
    /// Evaluations without Recall@20 improvement before stopping (0 disables).
    #[arg(long, default_value_t = 10)]
    patience: usize,
    /// Ranking cutoffs reported at each evaluation.
    #[arg(long, value_delimiter = ',', default_value = "10,20")]
    k: Vec<usize>,
    /// Share of each user's interactions kept for training.
    #[arg(long, default_value_t = 0.8)]
    split_ratio: f64,
    #[arg(long, default_value_t = 0.1)]
    init_std: f64,
    #[arg(long, default_value_t = 1.0)]
    coles_weight: f64,
    #[arg(long, default_value_t = 1.0)]
    hom_weight: f64,
    #[arg(long, default_value_t = 1.0)]
    het_weight: f64,
    /// Negative Laplacian resampling for node-cls COLES.
    #[arg(long, value_enum, default_value = "per-epoch")]
    neg_refresh: RefreshArg,
    /// Labeled share used to fit the node classifier.
    #[arg(long, default_value_t = 0.5)]
    train_fraction: f64,
    /// Metrics stream [default: metrics.jsonl next to --out].
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Debug, Args, serde::Serialize)]
#[command(args_override_self = true)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Split seed; must match the one used for training.
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0.8)]
    split_ratio: f64,
}

#[derive(Debug, Args, serde::Serialize)]
#[command(args_override_self = true)]
struct AuditArgs {
    /// Interaction file.
    #[arg(long)]
    data: PathBuf,
    /// Saved model; random embeddings are audited when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    batches: usize,
    /// Anchor users per audited batch.
    #[arg(long, default_value_t = 256)]
    anchors: usize,
    #[arg(long, default_value_t = 1)]
    neg_k: usize,
    #[arg(long, default_value_t = 50)]
    bins: usize,
    /// Width of random embeddings when no model is given.
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 0.8)]
    split_ratio: f64,
    /// Directory for bounds.jsonl, ratios.csv, histogram.csv and metadata.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, serde::Serialize)]
#[command(args_override_self = true)]
struct GradCheckArgs {
    #[arg(long, value_enum, default_value = "gr-coles")]
    loss: LossArg,
    #[arg(long, default_value_t = 30)]
    n: usize,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, value_enum, default_value = "layer-average")]
    variant: VariantArg,
    #[arg(long, value_enum, default_value = "on")]
    normalize: NormalizeArg,
    #[arg(long, default_value_t = 2)]
    neg_k: usize,
    #[arg(long, default_value_t = 1e-4)]
    threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
enum InfluenceVariant {
    LayerAverage,
    SelfloopLast,
    Both,
}

#[derive(Debug, Args, serde::Serialize)]
#[command(args_override_self = true)]
struct InfluenceArgs {
    /// Edge list, two node IDs per line.
    #[arg(long)]
    graph: PathBuf,
    /// Node ID as written in the edge list.
    #[arg(long)]
    node: String,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, value_enum, default_value = "both")]
    variant: InfluenceVariant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
enum SynthKind {
    Csbm,
    Planted,
}

#[derive(Debug, Args, serde::Serialize)]
#[command(args_override_self = true)]
struct SynthArgs {
    #[arg(long, value_enum)]
    kind: SynthKind,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// CSBM node count.
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// CSBM intra-class edge probability.
    #[arg(long, default_value_t = 0.1)]
    p: f64,
    /// CSBM inter-class edge probability.
    #[arg(long, default_value_t = 0.02)]
    q: f64,
    /// CSBM feature dimension.
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
    /// Per-coordinate offset between the two class means (0 makes features uninformative).
    #[arg(long, default_value_t = 0.0)]
    mean_shift: f64,
    #[arg(long, default_value_t = 200)]
    users: usize,
    #[arg(long, default_value_t = 300)]
    items: usize,
    #[arg(long, default_value_t = 4)]
    blocks: usize,
    #[arg(long, default_value_t = 0.2)]
    p_in: f64,
    #[arg(long, default_value_t = 0.01)]
    p_out: f64,
}

/// Failure classes mapped to process exit codes.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Self::Runtime(e)
    }
}

fn run(argv: Vec<OsString>) -> Result<(), Failure> {
    let argv = config_file::expand(argv).map_err(|e| Failure::Usage(format!("{e:#}")))?;
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            return Err(Failure::Usage(e.render().to_string()));
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.into()))?;
    }
    match cli.command {
        Command::Train(a) => commands::train::run(&a),
        Command::Eval(a) => commands::eval::run(&a),
        Command::AuditBounds(a) => commands::audit::run(&a),
        Command::GradCheck(a) => commands::gradcheck::run(&a),
        Command::Influence(a) => commands::influence::run(&a),
        Command::GenSynth(a) => commands::synth::run(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprint!("{msg}");
            if !msg.ends_with('\n') {
                eprintln!();
            }
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
