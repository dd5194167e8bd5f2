//! The `pvgnn` command line: synthetic data generation, training and
//! horizon-wise evaluation against persistence baselines.

// `!(x > 0.0)` style guards are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use pvgnn::model::ModelKind;

use commands::eval::EvalFlags;
use commands::gen_data::GenDataFlags;
use commands::train::TrainFlags;
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "pvgnn",
    version,
    about = "Graph neural network PV power forecasting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a plant network under advecting clouds.
    GenData(GenDataArgs),
    /// Train a forecaster and write a checkpoint plus loss trace.
    Train(TrainArgs),
    /// Score a checkpoint and both persistence baselines per horizon step.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// Number of plants.
    #[arg(long)]
    nodes: Option<usize>,
    /// Simulated days at 15-minute resolution.
    #[arg(long)]
    days: Option<usize>,
    /// Seed for plant placement and weather.
    #[arg(long)]
    seed: Option<u64>,
    /// Cloud advection speed.
    #[arg(long)]
    wind_kmh: Option<f64>,
    /// Cloud blobs per 1000 km² (0 = clear sky).
    #[arg(long)]
    clouds: Option<f64>,
    /// key = value file overriding defaults; flags override the file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Directory holding power.csv and plants.json.
    #[arg(long)]
    data: PathBuf,
    /// gclstm or gctrafo.
    #[arg(long, value_parser = parse_model)]
    model: Option<ModelKind>,
    /// Reduced dimensions and iteration count for a single machine.
    #[arg(long)]
    desk_scale: bool,
    /// Adam steps.
    #[arg(long)]
    iters: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Windows per batch.
    #[arg(long)]
    batch: Option<usize>,
    /// Seed for initialisation and batch sampling.
    #[arg(long)]
    seed: Option<u64>,
    /// key = value file overriding the profile; flags override the file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Directory holding power.csv and plants.json.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint directory, or a `train` output directory.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Expected horizon; must match the checkpoint.
    #[arg(long)]
    horizon: Option<usize>,
    /// Expected history length; must match the checkpoint.
    #[arg(long)]
    history: Option<usize>,
    /// Leading fraction of days treated as training; the rest is scored.
    #[arg(long, default_value_t = 0.7)]
    train_fraction: f64,
    /// Linke turbidity for the clear-sky features.
    #[arg(long, default_value_t = pvgnn::clearsky::DEFAULT_LINKE_TURBIDITY)]
    linke_turbidity: f64,
}

fn parse_model(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse().map_err(|e: pvgnn::Error| e.to_string())
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => commands::gen_data::run(&GenDataFlags {
            nodes: a.nodes,
            days: a.days,
            seed: a.seed,
            wind_kmh: a.wind_kmh,
            clouds: a.clouds,
            config: a.config,
            out: a.out,
        }),
        Command::Train(a) => commands::train::run(&TrainFlags {
            data: a.data,
            model: a.model,
            desk_scale: a.desk_scale,
            iters: a.iters,
            lr: a.lr,
            batch: a.batch,
            seed: a.seed,
            config: a.config,
            out: a.out,
        }),
        Command::Eval(a) => commands::eval::run(&EvalFlags {
            data: a.data,
            checkpoint: a.checkpoint,
            out: a.out,
            horizon: a.horizon,
            history: a.history,
            train_fraction: a.train_fraction,
            linke_turbidity: a.linke_turbidity,
        }),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
