mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use resprop::propagation::EtaChoice;

/// Residual propagation and graph-kernel experiments.
#[derive(Debug, Parser)]
#[command(name = "resprop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Basic residual propagation with S = A^K.
    Rp(RpArgs),
    /// Residual propagation with a feature kernel, S = A^K K A^K.
    Grp(GrpArgs),
    /// Label propagation baseline.
    Lp(LpArgs),
    /// Closed-form kernel regression with A^K K A^K.
    KernelReg(KernelRegArgs),
    /// Node-level graph neural tangent kernel.
    Gntk(GntkArgs),
    /// Alignment of a kernel dump with the graph and the labels.
    Align(AlignArgs),
    /// Generalization bound on the training subgraph.
    Bound(BoundArgs),
    /// Generate a stochastic block model dataset.
    Sbm(SbmArgs),
    /// Run built-in consistency checks.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset directory (edges.tsv, labels.csv, split.json, optional features).
    #[arg(long)]
    data: PathBuf,
    /// Divide each feature row by its sum.
    #[arg(long)]
    row_normalize: bool,
}

#[derive(Debug, Args)]
struct OutArgs {
    /// Output directory for metrics.json and friends.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Seed for randomized estimates (power iteration, bandwidth subsample).
    #[arg(long, default_value_t = resprop::linalg::DEFAULT_SEED)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Propagation power.
    #[arg(long = "K", default_value_t = 3)]
    k: usize,
    /// Step size, or `auto` for 0.9 times the convergence bound.
    #[arg(long, default_value = "auto", value_parser = parse_eta)]
    eta: EtaChoice,
    #[arg(long, default_value_t = 1000)]
    max_steps: usize,
    /// Steps without validation improvement before stopping; 0 disables.
    #[arg(long, default_value_t = resprop::propagation::DEFAULT_PATIENCE)]
    patience: usize,
}

#[derive(Debug, Args)]
struct RpArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Select the step size on validation over the built-in grid.
    #[arg(long, conflicts_with = "eta")]
    eta_grid: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KernelKind {
    Linear,
    Gaussian,
    Sigmoid,
}

#[derive(Debug, Args)]
struct KernelArgs {
    #[arg(long, value_enum, default_value_t = KernelKind::Gaussian)]
    kernel: KernelKind,
    /// Gaussian bandwidth; defaults to the median pairwise distance.
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Debug, Args)]
struct GrpArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Select K in 1..=10 and the bandwidth in median x {0.25, 0.5, 1, 2, 4}
    /// on validation (Gaussian kernel only).
    #[arg(long, conflicts_with_all = ["sigma", "k"])]
    grid: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct LpArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.9)]
    alpha: f64,
    /// Number of propagation steps; the closed-form limit when omitted.
    #[arg(long = "K")]
    k: Option<usize>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct KernelRegArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long = "K", default_value_t = 1)]
    k: usize,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Ridge added to the training block.
    #[arg(long)]
    ridge: Option<f64>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GntkForm {
    /// Layer recurrence on the dataset features (or X = I with --onehot).
    Recurrence,
    /// Two-layer closed form with only the first layer trained.
    TwoLayer,
    /// A^l (I + c 11^T) A^l.
    Decoupled,
    /// Linear GNN kernel A^l X X^T A^l.
    Linear,
}

#[derive(Debug, Args)]
struct GntkArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = GntkForm::Recurrence)]
    form: GntkForm,
    /// Network depth, or the power l for the decoupled and linear forms.
    #[arg(long, default_value_t = 2)]
    layers: usize,
    /// Constant of the decoupled form.
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    /// Use one-hot node inputs instead of the dataset features.
    #[arg(long)]
    onehot: bool,
    /// Skip writing theta.bin.
    #[arg(long)]
    no_dump: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct AlignArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Kernel dump written by `gntk`.
    #[arg(long)]
    theta: PathBuf,
    /// Center both matrices before comparing.
    #[arg(long)]
    center: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct BoundArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.9)]
    alpha: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct SbmArgs {
    /// Heterophily: 0 keeps edges within blocks, 1 moves them across.
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, default_value_t = resprop::linalg::DEFAULT_SEED)]
    seed: u64,
    /// Dataset directory to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    blocks: usize,
    #[arg(long, default_value_t = 400)]
    block_size: usize,
    #[arg(long, default_value_t = 100)]
    features: usize,
    #[arg(long, default_value_t = 0.01)]
    intra_p: f64,
    #[arg(long, default_value_t = 0.0025)]
    inter_p: f64,
    #[arg(long, default_value_t = 100)]
    train: usize,
    #[arg(long, default_value_t = 500)]
    val: usize,
    #[arg(long, default_value_t = 1000)]
    test: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SuiteArg {
    Graph,
    Propagation,
    Gntk,
    Oracle,
    Alignment,
    All,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = SuiteArg::All)]
    suite: SuiteArg,
    /// Also write the check results as metrics.json here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_eta(s: &str) -> Result<EtaChoice, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(EtaChoice::Auto);
    }
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(EtaChoice::Fixed(v)),
        _ => Err(format!("expected `auto` or a positive number, got {s:?}")),
    }
}

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

fn exit_code(err: &resprop::Error) -> u8 {
    if err.is_config_error() {
        EXIT_USAGE
    } else if err.is_data_error() {
        EXIT_DATA
    } else {
        EXIT_NUMERIC
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
