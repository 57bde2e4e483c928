//! Command-line flags.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "lsk", version, about = "Large selective kernel toolkit: planning, cost, forward passes, gradient checks and analysis")]
pub struct Cli {
    /// Emit machine-readable JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Worker threads (0 = automatic). Overrides LSK_THREADS.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Search decompositions for a receptive field, or check one plan.
    Plan(PlanArgs),
    /// Parameter and FLOP report for a plan or a backbone.
    Cost(CostArgs),
    /// Run a backbone forward pass and print the feature pyramid.
    Forward(ForwardArgs),
    /// Finite-difference check of an operator's gradient.
    Gradcheck(GradcheckArgs),
    /// Ratio and selection-difference metrics over exported traces.
    Analyze(AnalyzeArgs),
    /// Export a backbone's selection masks as LSKT and PGM files.
    Export(ExportArgs),
    /// Re-run a command from its echoed config.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Params,
    Flops,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScopeArg {
    /// Depthwise chain, selection conv and fusion.
    Comparison,
    /// Every layer of a spatial-selection module.
    Full,
    /// Depthwise chain only.
    Depthwise,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Target receptive field.
    #[arg(long, required_unless_present = "check")]
    pub rf: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub max_branches: usize,
    /// Comma-separated odd kernel sizes (default 3,5,...,31).
    #[arg(long, value_delimiter = ',')]
    pub kernels: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Params)]
    pub objective: ObjectiveArg,
    #[arg(long, default_value_t = 64)]
    pub channels: usize,
    /// Input size, `S` or `HxW`.
    #[arg(long, default_value = "1024")]
    pub size: String,
    #[arg(long, value_enum, default_value_t = ScopeArg::Comparison)]
    pub scope: ScopeArg,
    #[arg(long, default_value_t = 7)]
    pub selection_kernel: usize,
    /// Show only the best N plans.
    #[arg(long)]
    pub top: Option<usize>,
    /// Validate a plan such as "(5,1)->(7,3)" instead of searching.
    #[arg(long, conflicts_with = "rf")]
    pub check: Option<String>,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    /// Cost a bare decomposition, e.g. "(5,1)->(7,3)".
    #[arg(long, conflicts_with_all = ["preset", "config"])]
    pub plan: Option<String>,
    /// Second plan to compare against `--plan`; reports the parameter ratio plan/vs.
    #[arg(long, requires = "plan")]
    pub vs: Option<String>,
    #[arg(long, default_value_t = 64)]
    pub channels: usize,
    #[arg(long, default_value = "1024")]
    pub size: String,
    #[arg(long, value_enum, default_value_t = ScopeArg::Comparison)]
    pub scope: ScopeArg,
    #[arg(long, default_value_t = 7)]
    pub selection_kernel: usize,
    /// Backbone preset (lsknet-t, lsknet-s).
    #[arg(long)]
    pub preset: Option<String>,
    /// Backbone TOML config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Print the per-layer ledger in the human table.
    #[arg(long)]
    pub ledger: bool,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Load weights from a bundle directory instead of initializing them.
    #[arg(long, conflicts_with_all = ["preset", "config"])]
    pub weights: Option<PathBuf>,
    /// Input tensor: zeros:NxCxHxW, ones:..., seed:S:normal|uniform:..., or an LSKT path.
    #[arg(long)]
    pub input: String,
    /// Weight initialization seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ForwardArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Write each stage's features as stage<i>.lskt here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Save the weights as a bundle directory.
    #[arg(long)]
    pub save_weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Image id for file names; batch element b > 0 gets suffix _b.
    #[arg(long, default_value = "image")]
    pub image_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OpArg {
    Conv2d,
    Pool,
    GlobalPool,
    Sigmoid,
    Gelu,
    Affine,
    Lsk,
    Block,
    Backbone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConvKindArg {
    Depthwise,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolArg {
    Avg,
    Max,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Spatial,
    Channel,
    SpatialChannel,
    None,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum)]
    pub op: OpArg,
    #[arg(long, value_enum, default_value_t = ConvKindArg::Depthwise)]
    pub kind: ConvKindArg,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Channels (default depends on the op).
    #[arg(long)]
    pub channels: Option<usize>,
    /// Spatial size `S` or `HxW` (default depends on the op).
    #[arg(long)]
    pub size: Option<String>,
    #[arg(long, value_enum, default_value_t = PoolArg::Both)]
    pub pooling: PoolArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Spatial)]
    pub selection_mode: ModeArg,
    #[arg(long, default_value = "(3,1)->(5,2)")]
    pub plan: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    /// Relative tolerance (default 1e-6, 1e-5 for the backbone).
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub floor: f64,
    /// Check at most N evenly spaced coordinates per tensor.
    #[arg(long)]
    pub max_per_tensor: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightingArg {
    Linear,
    Area,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Both,
    Ratio,
    Selection,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Directory written by `export`.
    #[arg(long)]
    pub traces: PathBuf,
    /// DOTA annotation file or directory of per-image .txt files.
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, value_enum, default_value_t = WeightingArg::Linear)]
    pub weighting: WeightingArg,
    #[arg(long, value_enum, default_value_t = MetricArg::Both)]
    pub metric: MetricArg,
    /// Write SVG and CSV charts here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// File holding the echoed config (the JSON output, its `config` object,
    /// or human output containing a `config:` line).
    pub file: PathBuf,
}
