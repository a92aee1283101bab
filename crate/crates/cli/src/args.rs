//! Clap argument structs. Every config-file key has a flag here that
//! shadows it; flags win over the file, the file wins over defaults.
//! Environment variables are never consulted.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "graphfill",
    version,
    about = "Train and evaluate graph interpolation models for sparse count panels"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic panel, street network, and latent truth.
    Synth(SynthArgs),
    /// Build an adjacency from raw inputs and write it as an edge list.
    BuildGraph(BuildGraphArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Interpolate the test nodes of a checkpoint and score them.
    Eval(EvalArgs),
    /// Run an ablation grid: variants x seeds, one table.
    Ablate(AblateArgs),
    /// Attribute a checkpoint's predictions to its input channels.
    Attribute(AttributeArgs),
}

/// Where a run writes its artifacts. Each run creates a fresh
/// `<command>-<timestamp>-seed<seed>` directory under the root, so
/// nothing is ever overwritten silently.
#[derive(Debug, Args)]
pub struct OutArgs {
    /// Root directory for run outputs.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

/// Panel input files.
#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// Targets CSV: `node_id,time,value` with blank value = missing.
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// Wide features CSV: `node_id,time,feat_1,...,feat_k`.
    #[arg(long)]
    pub features_file: Option<PathBuf>,
    /// Flip observations beyond 3 sigma of their node's mean to missing.
    #[arg(long)]
    pub outlier_filter: bool,
}

/// Adjacency construction inputs. Which files are required depends on
/// the `--adjacency` kind; `dual:<a>+<b>` builds two stacks.
#[derive(Debug, Args, Default)]
pub struct GraphArgs {
    /// binary | distance | similarity | custom | dual:<a>+<b>
    #[arg(long)]
    pub adjacency: Option<String>,
    /// Edge list CSV for `binary`: `src,dst` (weights ignored).
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// Node coordinates CSV for `distance`: `node_id,x,y`.
    #[arg(long)]
    pub coords: Option<PathBuf>,
    /// Per-node infrastructure CSV for `similarity`: `node_id,f_1,...`.
    #[arg(long)]
    pub infra: Option<PathBuf>,
    /// Weighted edge list CSV for `custom`: `src,dst,weight`.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Distance kernel width; defaults to the off-diagonal distance std.
    #[arg(long)]
    pub sigma: Option<f64>,
}

/// Training knobs. All optional: absent flags fall back to the config
/// file, then to built-in defaults. The four ablation axes are paired
/// on/off switches so either direction can be forced.
#[derive(Debug, Args, Default)]
pub struct TrainFlags {
    /// Training loss: mae | mse | gnll | nb | zinb.
    #[arg(long)]
    pub loss: Option<String>,
    /// Declared output head; must match the loss's head. Accepts head
    /// names (point, gaussian, nb, zinb) or the loss that implies one.
    #[arg(long)]
    pub head: Option<String>,

    /// Feed all covered nodes' observations into the graph input.
    #[arg(long, overrides_with = "no_entire_graph")]
    pub entire_graph: bool,
    /// Restrict the graph input to the sampled nodes only.
    #[arg(long, overrides_with = "entire_graph")]
    pub no_entire_graph: bool,
    /// Use the feature channels as model input.
    #[arg(long, overrides_with = "no_features")]
    pub features: bool,
    /// Drop the feature channels from the input.
    #[arg(long, overrides_with = "features")]
    pub no_features: bool,
    /// Append the mask/missing indicator channels (requires features).
    #[arg(long, overrides_with = "no_indicators")]
    pub indicators: bool,
    /// Drop the indicator channels.
    #[arg(long, overrides_with = "indicators")]
    pub no_indicators: bool,
    /// Compute the loss on artificially masked entries only.
    #[arg(long, overrides_with = "no_masked_only_loss")]
    pub masked_only_loss: bool,
    /// Compute the loss on every valid entry.
    #[arg(long, overrides_with = "masked_only_loss")]
    pub no_masked_only_loss: bool,

    /// Number of training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Windows averaged per optimizer step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Window length in time steps (config key `window`).
    #[arg(long)]
    pub window: Option<usize>,
    /// Hidden width of the diffusion layers (config key `hidden`).
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Diffusion orders per direction.
    #[arg(long)]
    pub k_orders: Option<usize>,
    /// Fraction of sampled nodes masked per window.
    #[arg(long)]
    pub mask_ratio: Option<f64>,
    /// Initial learning rate.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Plateau schedule: LR multiplier on plateau.
    #[arg(long)]
    pub lr_factor: Option<f64>,
    /// Plateau schedule: epochs without improvement before reducing.
    #[arg(long)]
    pub lr_patience: Option<usize>,
    /// Plateau schedule: lower bound on the LR.
    #[arg(long)]
    pub min_lr: Option<f64>,
    /// Early stop after this many reductions without improvement.
    #[arg(long)]
    pub max_reductions: Option<usize>,
    /// Fraction of non-test nodes covered by sensors, in (0, 0.9].
    #[arg(long)]
    pub coverage: Option<f64>,
    /// within_period | future
    #[arg(long)]
    pub temporal_mode: Option<String>,
    /// Seed for the split and all training randomness.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Metric knobs shared by eval and ablate.
#[derive(Debug, Args, Default)]
pub struct EvalFlags {
    /// Histogram bins for the KL metric.
    #[arg(long)]
    pub bins: Option<usize>,
    /// Additive smoothing mass per KL bin.
    #[arg(long)]
    pub smoothing: Option<f64>,
    /// True-zero threshold: predictions below count as zero.
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of nodes (arranged on a near-square grid).
    #[arg(long, default_value_t = 64)]
    pub nodes: usize,
    /// Number of time steps.
    #[arg(long, default_value_t = 400)]
    pub steps: usize,
    /// Structural-zero probability, in [0, 1).
    #[arg(long, default_value_t = 0.5)]
    pub zero_inflation: f64,
    /// Negative-binomial dispersion; smaller = heavier tail.
    #[arg(long, default_value_t = 2.0)]
    pub dispersion: f64,
    /// Fraction of entries marked missing, in [0, 1).
    #[arg(long, default_value_t = 0.05)]
    pub missing_rate: f64,
    /// Generator seed.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct BuildGraphArgs {
    #[command(flatten)]
    pub graph: GraphArgs,
    /// Restrict/extend the node set to these ids (one per line);
    /// default is the sorted union of ids in the input file.
    #[arg(long)]
    pub nodes_file: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML config file; every key is shadowed by a flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub graph: GraphArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint JSON written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub graph: GraphArgs,
    #[command(flatten)]
    pub eval: EvalFlags,
    /// Variant label for the report row.
    #[arg(long, default_value = "eval")]
    pub variant: String,
    /// Override the split coverage recorded in the checkpoint.
    #[arg(long)]
    pub coverage: Option<f64>,
    /// Override the split seed recorded in the checkpoint.
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub graph: GraphArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub eval: EvalFlags,
    /// JSON file with an array of variants; default: the standard five.
    #[arg(long)]
    pub variants: Option<PathBuf>,
    /// Comma-separated seeds; default: seed, seed+1, seed+2.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct AttributeArgs {
    /// Checkpoint JSON written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub graph: GraphArgs,
    /// Integration steps for the path integral.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Channel grouping CSV: `channel_name,group_name` per line.
    #[arg(long)]
    pub groups: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArgs,
}
