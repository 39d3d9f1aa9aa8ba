use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ndt_cli::commands;
use ndt_cli::{CliResult, RunConfig};

#[derive(Parser)]
#[command(name = "hndt", version, about = "Hybrid network digital twin")]
struct Cli {
    /// Only print warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured scenario and write stream.jsonl.
    Simulate(Common),
    /// Train the twin with live triggers and write model.json and logs.
    Train {
        #[command(flatten)]
        common: Common,
        /// Observation stream; simulated from the config when absent.
        #[arg(long)]
        stream: Option<PathBuf>,
        /// Warm start from a saved model.
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
    /// Evaluate a saved model on a grid and write grid.csv.
    Evaluate {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        grid_res: usize,
    },
    /// Train the MLP baseline and write baseline_log.csv.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        stream: Option<PathBuf>,
    },
    /// Align training logs into compare.csv.
    Compare {
        #[arg(long)]
        out: PathBuf,
        /// MSE threshold for the summary row; twice each log's converged MSE by default.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(required = true)]
        logs: Vec<PathBuf>,
    },
}

fn load(common: &Common) -> CliResult<RunConfig> {
    let cfg = RunConfig::load(&common.config)?;
    Ok(match common.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(common) => {
            let m = commands::simulate(&load(&common)?, &common.out)?;
            println!("{} records, {} events", m.records, m.events.len());
        }
        Command::Train {
            common,
            stream,
            snapshot,
        } => {
            let s = commands::train(
                &load(&common)?,
                stream.as_deref(),
                snapshot.as_deref(),
                &common.out,
            )?;
            println!(
                "{} observations, K={}, lambda={:.4}, converged={}, {} events",
                s.observations, s.k, s.lambda, s.converged, s.events
            );
        }
        Command::Evaluate {
            snapshot,
            out,
            grid_res,
        } => {
            let n = commands::evaluate(&snapshot, grid_res, &out)?;
            println!("{n} grid points");
        }
        Command::Baseline { common, stream } => {
            let n = commands::baseline(&load(&common)?, stream.as_deref(), &common.out)?;
            println!("{n} observations");
        }
        Command::Compare {
            out,
            threshold,
            logs,
        } => {
            let s = commands::compare(&logs, threshold, &out)?;
            for ((f, t), n) in s.files.iter().zip(&s.thresholds).zip(&s.to_threshold) {
                let show = |v: Option<String>| v.unwrap_or_else(|| "-".into());
                println!(
                    "{}: threshold {} reached after {} observations",
                    f.display(),
                    show(t.map(|t| format!("{t:.4}"))),
                    show(n.map(|n| n.to_string()))
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
