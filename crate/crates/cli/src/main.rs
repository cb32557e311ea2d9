//! `fibred` — experiment driver for fibred-Wasserstein particle pipelines.
//!
//! Exit codes: 0 success, 1 parse/config error, 2 domain contract violation,
//! 3 numerical blow-up.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::MetricKind;
use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "fibred", version, about = "Fibred Wasserstein metrics and structured continuity equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for sweep points (0 = rayon default).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Exact distance between two measure files.
    Metric {
        file_a: String,
        file_b: String,
        /// Transport order.
        #[arg(long, default_value_t = 1)]
        p: u32,
        /// fibred | classical
        #[arg(long, default_value = "fibred")]
        metric: String,
        /// Optional JSON dump of the optimal plan / per-cell breakdown.
        #[arg(long)]
        plan: Option<String>,
    },
    /// Run the particle pipeline once and dump trajectories + curve.
    Simulate {
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Mean-field convergence sweep with rate fit and envelope check.
    Converge {
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the invariant suite on the configured model.
    Validate {
        #[arg(long)]
        config: String,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    let result = run(cli.command);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> fibred::Result<()> {
    match command {
        Command::Metric { file_a, file_b, p, metric, plan } => {
            let kind = match metric.as_str() {
                "fibred" => MetricKind::Fibred,
                "classical" => MetricKind::Classical,
                other => {
                    return Err(fibred::Error::Config(format!(
                        "unknown metric {other}; expected fibred|classical"
                    )))
                }
            };
            commands::cmd_metric(&file_a, &file_b, p, kind, plan.as_deref())
        }
        Command::Simulate { config, out, seed } => {
            let cfg = ExperimentConfig::load(&config)?;
            commands::cmd_simulate(&cfg, &commands::resolve_out_dir(out), seed)
        }
        Command::Converge { config, out, seed } => {
            let cfg = ExperimentConfig::load(&config)?;
            commands::cmd_converge(&cfg, &commands::resolve_out_dir(out), seed)
        }
        Command::Validate { config, seed } => {
            let cfg = ExperimentConfig::load(&config)?;
            commands::cmd_validate(&cfg, seed)
        }
    }
}
