//! `orient`: simulate, train, infer, filter, reconstruct and evaluate.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    pub fn io(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<orient_core::Error> for Failure {
    fn from(e: orient_core::Error) -> Self {
        match e {
            orient_core::Error::InvalidArgument(m) => Failure::Usage(m),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "orient", version, about = "Orientation recovery for simulated cryo-EM projections")]
pub struct Cli {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Project the phantom into a labelled image stack.
    Simulate(SimulateArgs),
    /// Train an encoder on a simulated stack.
    Train(TrainArgs),
    /// Predict orientations and uncertainty statistics.
    Infer(InferArgs),
    /// Drop the most uncertain images.
    Filter(FilterArgs),
    /// Direct Fourier reconstruction from images and orientations.
    Reconstruct(ReconstructArgs),
    /// Angular errors, uncertainty correlations and FSC.
    Evaluate(EvaluateArgs),
    /// Check analytic gradients against central differences.
    Gradcheck(GradcheckArgs),
    /// Learning rate, momentum and curriculum weights per step.
    ScheduleDump(ScheduleArgs),
    /// Train every variant along one ablation axis over the configured seeds.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub n: Option<usize>,
    /// Target SNR, or `clean` for noise-free images.
    #[arg(long)]
    pub snr: Option<String>,
    /// Image side in pixels.
    #[arg(long)]
    pub d: Option<usize>,
    /// `c1` or `d2`.
    #[arg(long)]
    pub symmetry: Option<String>,
    #[arg(long)]
    pub no_ctf: bool,
    /// Maximum shift per axis, in pixels.
    #[arg(long)]
    pub shift_max: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// `quat`, `sixd` or `qcqp`.
    #[arg(long)]
    pub head: Option<String>,
    /// `none`, `gaussian` or `lowpass`.
    #[arg(long)]
    pub blur: Option<String>,
    /// `gem`, `max` or `max_plus_avg`.
    #[arg(long)]
    pub pool: Option<String>,
    /// `single`, `siamese` or `siamese_aux`.
    #[arg(long)]
    pub style: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// `random` or `stratified`.
    #[arg(long)]
    pub pairs: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory holding `stack.mrc` and `orient.csv`.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Directory holding the image stack.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory of `infer`.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub keep: Option<f64>,
    /// `trace` or `lambda_max`.
    #[arg(long)]
    pub statistic: Option<String>,
    /// Restrict to one split before filtering.
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Directory holding `stack.mrc`.
    #[arg(long)]
    pub data: PathBuf,
    /// Orientation table to use (default: the one in `--data`).
    #[arg(long)]
    pub orient: Option<PathBuf>,
    /// Use only the images of one split.
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of `simulate` (ground truth).
    #[arg(long)]
    pub truth: PathBuf,
    /// Directory of `infer` or `filter`.
    #[arg(long)]
    pub pred: PathBuf,
    /// Reconstruction to score, together with `--reference`.
    #[arg(long, requires = "reference")]
    pub volume: Option<PathBuf>,
    #[arg(long, requires = "volume")]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Random parameters probed in the end-to-end network check.
    #[arg(long, default_value_t = 20)]
    pub probes: usize,
    /// Random QCQP parameter vectors checked.
    #[arg(long, default_value_t = 100)]
    pub qcqp_cases: usize,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Default: derived from the simulated training split and batch size.
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// `head`, `style`, `blur` or `pool`.
    #[arg(long)]
    pub axis: String,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
