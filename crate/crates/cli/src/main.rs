//! `stresnet`: data extraction, training, filtering and evaluation for the
//! spatial-temporal residual in-loop filter.

mod commands;
mod manifest;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{ArgGroup, Args, Parser, Subcommand};
use stresnet::FilterMode;

#[derive(Parser, Debug)]
#[command(name = "stresnet", version, about)]
struct Cli {
    /// Worker threads for per-sample and per-CTU parallelism (0 = all cores).
    #[arg(long, global = true, env = "STRESNET_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Crop co-located/current/target triplets into a shuffled sample store.
    Extract(ExtractArgs),
    /// Train a model on a sample store.
    Train(TrainArgs),
    /// Filter a degraded sequence and choose per-CTU flags against the original.
    Filter(FilterArgs),
    /// Rebuild the filtered sequence from degraded frames and a flag file.
    Replay(ReplayArgs),
    /// PSNR between two videos, BD-rate between two RD curves, or a timing ratio.
    Eval(EvalArgs),
    /// Degrade, extract, train briefly, filter and evaluate a synthetic clip.
    Demo(DemoArgs),
}

/// Raw YUV is headerless, so the geometry is always given explicitly.
#[derive(Args, Debug, Clone)]
pub struct Dims {
    #[arg(long)]
    pub width: usize,
    #[arg(long)]
    pub height: usize,
    #[arg(long)]
    pub frames: usize,
}

#[derive(Args, Debug, Clone)]
#[command(group(ArgGroup::new("source").required(true).args(["degraded", "degrade"])))]
pub struct ExtractArgs {
    /// Pristine 8-bit 4:2:0 video.
    #[arg(long)]
    pub pristine: PathBuf,
    /// Already degraded (decoded) video aligned with the pristine one.
    #[arg(long)]
    pub degraded: Option<PathBuf>,
    /// Degrade the pristine video with this DCT quantizer step instead.
    #[arg(long, value_name = "STEP")]
    pub degrade: Option<f64>,
    /// Where to write the degraded video produced by --degrade.
    #[arg(long)]
    pub degraded_out: Option<PathBuf>,
    #[command(flatten)]
    pub dims: Dims,
    /// Reference-index file (one index per frame, -1 for none). Default: previous frame.
    #[arg(long)]
    pub refs: Option<PathBuf>,
    #[arg(long, default_value_t = stresnet::dataset::DEFAULT_STRIDE)]
    pub stride: usize,
    /// Shuffle seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// QP tag stored in the header.
    #[arg(long, default_value_t = 22)]
    pub qp: i16,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Selects the default hyper-parameters; defaults to the store's QP.
    #[arg(long)]
    pub qp: Option<i16>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initialization seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Standard deviation of the Gaussian weight initialization.
    #[arg(long)]
    pub init_std: Option<f64>,
    #[arg(long)]
    pub log_every: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Samples at the end of the store held out for the reported losses.
    #[arg(long)]
    pub holdout: Option<usize>,
    /// Loss log path. Default: `<out stem>.loss.tsv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Skip intermediate checkpoint files.
    #[arg(long)]
    pub no_checkpoints: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct FilterArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub degraded: PathBuf,
    #[arg(long)]
    pub original: PathBuf,
    #[command(flatten)]
    pub dims: Dims,
    #[arg(long)]
    pub refs: Option<PathBuf>,
    /// in_loop or out_of_loop.
    #[arg(long, default_value = "in_loop")]
    pub mode: FilterMode,
    #[arg(long)]
    pub out: PathBuf,
    /// Default: `<out stem>.flags.txt`.
    #[arg(long)]
    pub flags: Option<PathBuf>,
    /// Default: `<out stem>.trace.csv`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ReplayArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub degraded: PathBuf,
    #[arg(long)]
    pub flags: PathBuf,
    #[command(flatten)]
    pub dims: Dims,
    #[arg(long)]
    pub refs: Option<PathBuf>,
    #[arg(long, default_value = "in_loop")]
    pub mode: FilterMode,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
#[command(group(ArgGroup::new("metric").required(true).args(["psnr", "bdrate", "dt"])))]
pub struct EvalArgs {
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    pub psnr: Option<Vec<PathBuf>>,
    /// CSV files of `rate,psnr` rows.
    #[arg(long, num_args = 2, value_names = ["ANCHOR", "TEST"])]
    pub bdrate: Option<Vec<PathBuf>>,
    /// Baseline and modified running times.
    #[arg(long, num_args = 2, value_names = ["T", "T_MOD"])]
    pub dt: Option<Vec<f64>>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct DemoArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 96)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    /// DCT quantizer step used to degrade the clip.
    #[arg(long, default_value_t = 16.0)]
    pub step: f64,
    #[arg(long, default_value_t = 300)]
    pub iterations: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Extract(a) => commands::extract(&a),
        Command::Train(a) => commands::train(&a),
        Command::Filter(a) => commands::filter(&a),
        Command::Replay(a) => commands::replay(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Demo(a) => commands::demo(&a),
    }
}
