//! `guided-spde` command-line tool.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use guided_spde::Error;

use commands::Context;
use config::{Method, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "guided-spde", version, about = "Guided filtering and smoothing for the stochastic Amari equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset produced by `simulate`.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// True path dump; defaults to `truth.bin` next to the dataset.
    #[arg(long, global = true)]
    truth: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured filter.
    #[arg(long, global = true, value_enum)]
    flavor: Option<Method>,
    /// Keep every k-th observation.
    #[arg(long, global = true)]
    downsample: Option<usize>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Simulate a path and noisy observations.
    Simulate,
    /// Run a filter on a dataset.
    Filter,
    /// Sample paths given fixed parameters.
    Smooth,
    /// Sample paths and drift parameters.
    Infer,
    /// Run several filters and tabulate their errors.
    Compare,
    /// Print the default configuration.
    DefaultConfig,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Json(_) | Error::Format(_) | Error::InvalidGrid(_) | Error::InvalidParameter(_) | Error::ShapeMismatch { .. } => 2,
        Error::Numerical(_) | Error::NotPositiveDefinite(_) | Error::InvalidWeights(_) | Error::TimeOutOfRange { .. } => 3,
        Error::Io(_) => 1,
    }
}

fn default_config() -> RunConfig {
    use guided_spde::amari::AmariParams;
    use guided_spde::model::AmariModelSpec;
    RunConfig {
        model: AmariModelSpec::reference(128, AmariParams::travelling_waves()),
        x0: Default::default(),
        observation: config::ObservationBlock {
            times: (1..=20).map(f64::from).collect(),
            dt: 0.04,
            cells: 15,
            cell_width: 1.0,
            sigma_scale: 0.01,
        },
        method: Default::default(),
        output: Default::default(),
        seed: 1,
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    if let Command::DefaultConfig = cli.command {
        println!("{}", serde_json::to_string_pretty(&default_config())?);
        return Ok(());
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("--config is required".into()))?;
    let mut config = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(f) = cli.flavor {
        config.method.flavor = f;
    }
    if cli.downsample.is_some() {
        config.method.downsample = cli.downsample;
        config.validate()?;
    }
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?;
    }
    commands::ensure_out(&cli.out)?;
    config.save(cli.out.join("config.json"))?;
    let flavor = config.method.flavor;
    let ctx = Context {
        config,
        data: cli.data.clone(),
        truth: cli.truth.clone(),
        out: cli.out.clone(),
    };
    match cli.command {
        Command::Simulate => commands::simulate(&ctx),
        Command::Filter => commands::filter(&ctx, flavor),
        Command::Smooth => commands::smooth(&ctx, false),
        Command::Infer => commands::smooth(&ctx, true),
        Command::Compare => commands::compare(&ctx),
        Command::DefaultConfig => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let kind = match code {
                2 => "schema error",
                3 => "numerical failure",
                _ => "error",
            };
            eprintln!("{kind}: {e}");
            ExitCode::from(code)
        }
    }
}
