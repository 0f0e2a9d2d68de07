use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hjm_cli::{commands, CliResult, Overrides, RunConfig};

/// Multi-commodity HJM pipeline for energy forward markets.
#[derive(Parser)]
#[command(name = "hjm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse quotes, build relative panels and return diagnostics.
    Ingest(Common),
    /// Bootstrap flat monthly forward curves.
    Curve(Common),
    /// Estimate the covariance, run PCA and write the factor model.
    Calibrate(Common),
    /// Simulate fixed-delivery, short-horizon and spot scenarios.
    Simulate(Common),
    /// Value the configured VPP, swing and storage contracts.
    Price(Common),
    /// Run every stage in order.
    Pipeline(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of Monte Carlo paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Explained-variance threshold for the factor count.
    #[arg(long)]
    threshold: Option<f64>,
    /// Fixed factor count, overriding the threshold.
    #[arg(long)]
    factors: Option<usize>,
}

impl Common {
    fn load(&self) -> CliResult<RunConfig> {
        RunConfig::load(
            &self.config,
            &Overrides {
                seed: self.seed,
                out: self.out.clone(),
                paths: self.paths,
                threshold: self.threshold,
                factors: self.factors,
            },
        )
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Ingest(c) => commands::ingest(&c.load()?).map(drop),
        Command::Curve(c) => commands::curve(&c.load()?).map(drop),
        Command::Calibrate(c) => commands::calibrate(&c.load()?).map(drop),
        Command::Simulate(c) => commands::simulate(&c.load()?).map(drop),
        Command::Price(c) => commands::price(&c.load()?).map(drop),
        Command::Pipeline(c) => commands::pipeline(&c.load()?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
