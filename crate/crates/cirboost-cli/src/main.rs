use std::path::PathBuf;
use std::process::ExitCode;

use cirboost_cli::{experiments, output, CliError, Settings};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cirboost", version, about = "Random-grid boosted Monte Carlo for the CIR and Heston models")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Boosted estimates over n with regressed convergence slopes
    Converge(Opts),
    /// Variance of the order-2 correction per scheme and n
    VarianceTable(Opts),
    /// Pilot, allocate and run the independent and dependent estimators
    Allocate(Opts),
    /// Boosted estimates with equal sample counts
    Price(Opts),
    /// Deterministic checks of the scheme order and coefficient identities
    OracleCheck(Opts),
}

#[derive(clap::Args)]
struct Opts {
    /// TOML file with the same keys as the flags
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (opts, command): (Opts, fn(&_) -> _) = match cli.command {
        Cmd::Converge(o) => (o, experiments::converge),
        Cmd::VarianceTable(o) => (o, experiments::variance_table),
        Cmd::Allocate(o) => (o, experiments::allocate),
        Cmd::Price(o) => (o, experiments::price),
        Cmd::OracleCheck(o) => (o, experiments::oracle_check),
    };
    let file = match &opts.config {
        Some(p) => Settings::from_file(p)?,
        None => Settings::default(),
    };
    let cfg = file.overlay(opts.settings).resolve()?;
    let report = command(&cfg)?;
    for line in &report.summary {
        eprintln!("{line}");
    }
    for path in output::emit(&cfg, &report)? {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.render().to_string();
            eprintln!("{}", CliError::Config(msg.trim_end().to_string()).to_json());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(2)
        }
    }
}
