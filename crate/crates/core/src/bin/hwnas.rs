use std::panic;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hwnas::pipeline::{self, config::LoadedConfig, LocalArgs, PipelineError};

/// Environment variable holding the log filter (`error` .. `trace`).
const LOG_ENV: &str = "HWNAS_LOG";

#[derive(Parser)]
#[command(name = "hwnas", version, about = "Hardware-aware neural architecture search for FPGA-bound MLPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the global multi-objective search.
    Search {
        #[arg(long)]
        config: PathBuf,
    },
    /// Prune and quantize one architecture from a search run.
    Localsearch {
        #[arg(long)]
        config: PathBuf,
        /// Search run directory holding pareto.json.
        #[arg(long)]
        from: PathBuf,
        #[arg(long, conflicts_with = "model", required_unless_present = "model")]
        genome: Option<String>,
        /// Start from an exported model.json instead of a genome key.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        target_sparsity: f64,
        #[arg(long, default_value_t = 0.0)]
        min_accuracy: f64,
        /// Output directory (default: <from>/local/<hash>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print accuracy and hardware tables for a run.
    Report { run: PathBuf },
    /// Scatter two trial metrics against each other.
    Plot {
        run: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        #[arg(long)]
        log_x: bool,
    },
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Search { config } => {
            let cfg = LoadedConfig::from_path(&config)?;
            let dir = pipeline::cmd_search(&cfg)?;
            println!("{}", dir.display());
        }
        Command::Localsearch {
            config,
            from,
            genome,
            model,
            target_sparsity,
            min_accuracy,
            out,
        } => {
            let dir = pipeline::cmd_localsearch(&LocalArgs {
                config,
                from,
                genome,
                model,
                target_sparsity,
                min_accuracy,
                out,
            })?;
            println!("{}", dir.display());
        }
        Command::Report { run } => print!("{}", pipeline::cmd_report(&run)?),
        Command::Plot { run, x, y, log_x } => {
            let out = pipeline::cmd_plot(&run, &x, &y, log_x)?;
            println!("{}", out.csv.display());
            println!("{}", out.svg.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { pipeline::EXIT_USER as u8 } else { 0 });
        }
    };
    match panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::from(pipeline::EXIT_OK as u8),
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => ExitCode::from(pipeline::EXIT_INTERNAL as u8),
    }
}
