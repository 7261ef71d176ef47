//! `flowvi`: 2D energy fits, desk-scale VAE training, gradient audits and
//! synthetic data.

mod config;
mod error;
mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flowvi_core::gradcheck::DEFAULT_INSTANCES;
use flowvi_core::{Activation, FlowFamily, Likelihood, TrainConfig};

use config::{ExperimentConfig, Fit2dConfig, GradcheckConfig, VaeConfig};
use error::CliError;

#[derive(Parser)]
#[command(
    name = "flowvi",
    version,
    about = "Variational inference with normalizing flows"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a flow posterior to a 2D test energy.
    Fit2d(Fit2dArgs),
    /// Train a deep latent Gaussian model with an amortized flow posterior.
    Vae(VaeArgs),
    /// Compare every analytic gradient with finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic binary bar-image dataset.
    Synth(SynthArgs),
    /// Rerun the experiment described by a config.json.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Updates to run [default: 30000 for fit2d, 10000 for vae].
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// RMSprop learning rate [default: 3e-4 for fit2d, 1e-3 for vae].
    #[arg(long)]
    lr: Option<f64>,
    /// Datapoints (vae) or samples (fit2d) per update.
    #[arg(long, default_value_t = 100)]
    minibatch: usize,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 0.01)]
    anneal_t0: f64,
    #[arg(long, default_value_t = 10_000)]
    anneal_steps: usize,
    /// Metrics are recorded every this many updates and at the last one.
    #[arg(long, default_value_t = 100)]
    eval_every: usize,
    /// Record elapsed milliseconds in metrics.csv (breaks byte-identical reruns).
    #[arg(long)]
    wallclock: bool,
}

impl TrainArgs {
    fn resolve(&self, k: usize, iters: usize, lr: f64) -> TrainConfig {
        TrainConfig {
            minibatch: self.minibatch,
            learning_rate: self.lr.unwrap_or(lr),
            momentum: self.momentum,
            anneal_t0: self.anneal_t0,
            anneal_steps: self.anneal_steps,
            k,
            iters: self.iters.unwrap_or(iters),
            seed: self.seed,
            eval_every: self.eval_every,
        }
    }
}

#[derive(Args)]
struct Fit2dArgs {
    /// Test energy 1-4.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    energy: u8,
    /// planar | radial | nice-perm | nice-orth
    #[arg(long, default_value = "planar", value_parser = parse_family)]
    flow: FlowFamily,
    /// Flow length.
    #[arg(long, default_value_t = 0)]
    k: usize,
    /// Grid points per axis on [-4, 4] for density files and the normalizer.
    #[arg(long, default_value_t = 200)]
    grid_n: usize,
    /// Monte Carlo samples for the KL estimate.
    #[arg(long, default_value_t = 10_000)]
    kl_samples: usize,
    #[arg(long, default_value_t = 8)]
    nice_hidden: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct VaeArgs {
    /// Dataset file: a JSON header line then little-endian rows.
    #[arg(long)]
    data: String,
    #[arg(long)]
    latent_dim: usize,
    #[arg(long, default_value = "planar", value_parser = parse_family)]
    flow: FlowFamily,
    #[arg(long, default_value_t = 0)]
    k: usize,
    /// bernoulli | logitnormal
    #[arg(long, default_value = "bernoulli", value_parser = parse_likelihood)]
    likelihood: Likelihood,
    /// Comma-separated hidden widths shared by encoder and decoder.
    #[arg(long, default_value = "32", value_delimiter = ',')]
    hidden: Vec<usize>,
    /// maxout | tanh
    #[arg(long, default_value = "maxout", value_parser = parse_activation)]
    activation: Activation,
    #[arg(long, default_value_t = 8)]
    nice_hidden: usize,
    /// Importance samples per datapoint for eval.json.
    #[arg(long, default_value_t = 200)]
    is_samples: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random instances per family.
    #[arg(long, default_value_t = DEFAULT_INSTANCES)]
    instances: usize,
    /// Perturb the analytic gradient of one family.
    #[arg(long, hide = true)]
    corrupt: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    /// N×D, e.g. 500x64 for 500 images of 8×8.
    #[arg(long)]
    shape: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    wallclock: bool,
}

fn parse_family(s: &str) -> Result<FlowFamily, String> {
    s.parse().map_err(|e: flowvi_core::Error| e.to_string())
}

fn parse_likelihood(s: &str) -> Result<Likelihood, String> {
    s.parse().map_err(|e: flowvi_core::Error| e.to_string())
}

fn parse_activation(s: &str) -> Result<Activation, String> {
    match s {
        "maxout" => Ok(Activation::Maxout { window: 2 }),
        "tanh" => Ok(Activation::Tanh),
        other => Err(format!("unknown activation {other:?} (maxout | tanh)")),
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("FLOWVI_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n >= 1).ok_or_else(|| {
        CliError::Input(format!(
            "FLOWVI_THREADS must be a positive integer, got {v:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Internal(e.to_string()))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Fit2d(a) => {
            let cfg = ExperimentConfig::Fit2d(Fit2dConfig {
                energy: a.energy,
                flow: a.flow,
                nice_hidden: a.nice_hidden,
                grid_n: a.grid_n,
                kl_samples: a.kl_samples,
                train: a.train.resolve(a.k, 30_000, 3e-4),
            });
            run::run(&cfg, &a.out, a.train.wallclock)
        }
        Command::Vae(a) => {
            let cfg = ExperimentConfig::Vae(VaeConfig {
                data: a.data,
                latent_dim: a.latent_dim,
                flow: a.flow,
                likelihood: a.likelihood,
                hidden: a.hidden,
                activation: a.activation,
                nice_hidden: a.nice_hidden,
                is_samples: a.is_samples,
                train: a.train.resolve(a.k, 10_000, 1e-3),
            });
            run::run(&cfg, &a.out, a.train.wallclock)
        }
        Command::Gradcheck(a) => {
            let cfg = ExperimentConfig::Gradcheck(GradcheckConfig {
                seed: a.seed,
                instances: a.instances,
                corrupt: a.corrupt,
            });
            run::run(&cfg, &a.out, false)
        }
        Command::Synth(a) => run::synth(&a.shape, &a.out, a.seed),
        Command::Replay(a) => run::run(&ExperimentConfig::load(&a.config)?, &a.out, a.wallclock),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("flowvi: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
