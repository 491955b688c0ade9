use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use krom_cli::commands;
use krom_cli::config::load;
use krom_cli::{CliResult, ExperimentConfig};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "krom", version, about = "Koopman reduced-order models: collect, fit, predict, mpc, bench")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `output` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Leaf overrides, `dotted.path=value` (value parsed as JSON when possible).
    #[arg(long = "set", short = 's', global = true, value_name = "PATH=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate (or copy) snapshot episodes into OUT/data.
    Collect,
    /// Fit per-label Koopman models and the interpolating model into OUT/models.
    Fit,
    /// Compare plant and model trajectories into OUT/predict.
    Predict,
    /// Run the receding-horizon loop into OUT/mpc.
    Mpc,
    /// Time plant steps against model steps into OUT/bench.json.
    Bench,
}

fn print<T: Serialize>(report: &T) -> CliResult<()> {
    println!("{}", serde_json::to_string_pretty(report)?);
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| krom_cli::CliError::config("--config PATH is required"))?;
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(out) = &cli.out {
        overrides.push(format!("output={}", serde_json::to_string(out)?));
    }
    let cfg: ExperimentConfig = load(path, &overrides)?;
    match cli.command {
        Command::Collect => print(&commands::collect(&cfg)?),
        Command::Fit => print(&commands::fit(&cfg)?),
        Command::Predict => print(&commands::predict(&cfg)?),
        Command::Mpc => print(&commands::mpc(&cfg)?),
        Command::Bench => print(&commands::bench(&cfg)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
