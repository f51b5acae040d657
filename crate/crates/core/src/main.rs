use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spatial_profile::config::RunConfig;
use spatial_profile::error::{Error, Result};
use spatial_profile::run;

/// Spatial profile regression with a Dirichlet process mixture and ICAR spatial effects.
#[derive(Debug, Parser)]
#[command(name = "sprofile", version)]
struct Cli {
    /// Log level (error, warn, info, debug, trace); RUST_LOG takes precedence.
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the MCMC chains and write traces and summaries.
    Fit { config: PathBuf },
    /// Generate a synthetic dataset from a TOML spec.
    Simulate { spec: PathBuf },
    /// Recompute predictive draws for the configured profiles from a stored trace.
    Predict { config: PathBuf },
    /// Report on a fit output directory.
    Summarize { output_dir: PathBuf },
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit { config } => {
            let cfg = RunConfig::from_file(&config)?;
            let out = run::run_fit(&cfg)?;
            println!(
                "wrote {} ({} chains, {} clusters)",
                cfg.output_dir.display(),
                out.traces.len(),
                out.partition.k
            );
        }
        Command::Simulate { spec } => {
            let dir = run::simulate(&spec)?;
            println!("wrote {}", dir.display());
        }
        Command::Predict { config } => {
            let cfg = RunConfig::from_file(&config)?;
            run::run_predict(&cfg)?;
            println!("wrote {}", cfg.output_dir.join("predictions.csv").display());
        }
        Command::Summarize { output_dir } => print!("{}", run::summarize(&output_dir)?),
    }
    Ok(())
}

fn report(e: &Error) {
    let record = serde_json::json!({
        "error": e.kind(),
        "exit_code": e.exit_code(),
        "message": e.to_string(),
    });
    eprintln!("{record}");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log)).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
