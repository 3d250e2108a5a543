use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "hcocoa", version, about = "Hierarchical CoCoA training for generalized linear models")]
#[command(args_override_self = true)]
pub struct Cli {
    /// key=value file whose entries act as flags; explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model.
    Train(TrainArgs),
    /// Write per-example scores and probabilities.
    Predict(PredictArgs),
    /// Report logloss and accuracy (or MSE) of a model on labeled data.
    Eval(EvalArgs),
    /// Convert svmlight data to a chunk store for out-of-core training.
    Chunk(ChunkArgs),
    /// Rate bounds and (t1, t2) schedules under a communication budget.
    Analyze(AnalyzeArgs),
    #[command(hide = true)]
    AllreduceCheck(AllreduceCheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Logistic,
    Svm,
    Ridge,
    Lasso,
}

impl From<ObjectiveArg> for hcocoa::ObjectiveKind {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Logistic => Self::DualLogistic,
            ObjectiveArg::Svm => Self::DualSvm,
            ObjectiveArg::Ridge => Self::RidgePrimal,
            ObjectiveArg::Lasso => Self::LassoPrimal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CommArg {
    Inproc,
    TcpStar,
    TcpRing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PartitionArg {
    Contiguous,
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Args)]
pub struct CostArgs {
    /// Cost of one outer (inter-node) round.
    #[arg(long, default_value_t = 0.0)]
    pub c1: f64,
    /// Cost of one inner (intra-node) round.
    #[arg(long, default_value_t = 0.0)]
    pub c2: f64,
    /// Cost of one device subtask.
    #[arg(long, default_value_t = 0.0)]
    pub ccomp: f64,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Training data: svmlight text or a chunk store (trained out of core).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Logistic)]
    pub objective: ObjectiveArg,
    #[arg(long, default_value_t = 0.01)]
    pub lambda: f64,

    #[arg(long, default_value_t = 1)]
    pub nodes: usize,
    #[arg(long, default_value_t = 1)]
    pub devices: usize,
    /// Outer rounds.
    #[arg(long, default_value_t = 100)]
    pub t1: usize,
    /// Inner rounds per outer round.
    #[arg(long, default_value_t = 1)]
    pub t2: usize,
    /// Overrides --t1.
    #[arg(long)]
    pub max_rounds: Option<usize>,
    /// Outer aggregation parameter (default: nodes).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Inner aggregation parameter (default: devices).
    #[arg(long)]
    pub sigma_bar: Option<f64>,
    /// Solver epochs per device per inner round.
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1)]
    pub threads_per_device: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = PartitionArg::Contiguous)]
    pub partition: PartitionArg,
    /// Solver threads read a snapshot of the shared vector (worst-case staleness).
    #[arg(long)]
    pub stale_reads: bool,
    /// Measure each device's θ against an exact local solve (slow).
    #[arg(long)]
    pub measure_theta: bool,

    /// Stop when F − optimum ≤ this (needs --optimum).
    #[arg(long)]
    pub target_subopt: Option<f64>,
    #[arg(long)]
    pub optimum: Option<f64>,
    #[arg(long)]
    pub target_gap: Option<f64>,
    /// Wall-clock budget in seconds.
    #[arg(long)]
    pub time_budget: Option<f64>,

    #[command(flatten)]
    pub cost: CostArgs,

    #[arg(long, value_enum, default_value_t = CommArg::Inproc)]
    pub comm: CommArg,
    #[arg(long, default_value_t = 0)]
    pub rank: usize,
    /// Comma-separated host:port list, one per rank.
    #[arg(long, value_delimiter = ',')]
    pub peers: Vec<String>,
    /// Seconds to wait for peers.
    #[arg(long, default_value_t = 30.0)]
    pub comm_timeout: f64,

    #[arg(long, value_enum, default_value_t = OnOff::On)]
    pub pipeline: OnOff,
    #[arg(long, default_value_t = 0)]
    pub inject_load_delay_ms: u64,
    #[arg(long, default_value_t = 0)]
    pub inject_rand_delay_ms: u64,
    #[arg(long, default_value_t = 0)]
    pub inject_train_delay_ms: u64,
    /// Stage timing CSV (out-of-core runs).
    #[arg(long)]
    pub stage_log: Option<PathBuf>,

    /// Where to write the model.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Where to write the convergence trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output CSV (`score,probability` per example); stdout if omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ChunkArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Examples per chunk.
    #[arg(long, default_value_t = 4096)]
    pub chunk_size: usize,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub cost: CostArgs,
    /// Total cost budget C.
    #[arg(long)]
    pub budget: f64,
    /// Device solver quality θ̄.
    #[arg(long, default_value_t = 0.5)]
    pub theta_bar: f64,
    #[arg(long, default_value_t = 1)]
    pub nodes: usize,
    #[arg(long, default_value_t = 1)]
    pub devices: usize,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub sigma_bar: Option<f64>,

    /// Derive β, μ, R and c_A from this data set.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Logistic)]
    pub objective: ObjectiveArg,
    #[arg(long, default_value_t = 0.01)]
    pub lambda: f64,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub ca: Option<f64>,
    /// Initial suboptimality for the strongly convex bound.
    #[arg(long, default_value_t = 1.0)]
    pub eps0: f64,

    /// Also report time to `--target` on this convergence trace.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Inner rounds the trace was recorded with.
    #[arg(long, default_value_t = 1)]
    pub trace_t2: usize,
    #[arg(long)]
    pub optimum: Option<f64>,
    #[arg(long)]
    pub target: Option<f64>,

    /// Schedule table CSV; stdout if omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AllreduceCheckArgs {
    #[arg(long, value_enum)]
    pub comm: CommArg,
    #[arg(long, default_value_t = 0)]
    pub rank: usize,
    #[arg(long, value_delimiter = ',')]
    pub peers: Vec<String>,
    /// World size for the in-process reducer.
    #[arg(long, default_value_t = 4)]
    pub world: usize,
    #[arg(long, default_value_t = 100)]
    pub vectors: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}
