use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tommy::cli;
use tommy::OnlineConfig;

#[derive(Parser)]
#[command(name = "tommy", version, about = "Probabilistic fair ordering for drifty clocks")]
struct Cli {
    /// Override the seed in a simulation config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Grid resolution for empirical clock models, in the timestamp unit.
    #[arg(long, global = true, default_value_t = 1.0)]
    resolution_us: f64,

    /// Batch boundary confidence; adjacent ranks split when the kept edge
    /// exceeds this.
    #[arg(long, global = true, default_value_t = 0.75)]
    threshold: f64,

    /// Offset quantile order used for safe emission times and watermarks.
    #[arg(long, global = true, default_value_t = 0.999)]
    p_safe: f64,

    /// Write the main result here instead of stdout (required for simulate).
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Probability that one client's timestamp precedes another's.
    Probe {
        /// Clock model file (JSON map of client to model).
        #[arg(long)]
        models: PathBuf,
        /// Client owning the first timestamp.
        #[arg(long)]
        client_i: String,
        /// Client owning the second timestamp.
        #[arg(long)]
        client_j: String,
        /// First local timestamp.
        #[arg(long, allow_hyphen_values = true)]
        t_i: f64,
        /// Second local timestamp.
        #[arg(long, allow_hyphen_values = true)]
        t_j: f64,
    },
    /// Order a message file into ranked batches.
    Order {
        /// Message file: `id client local_ts [true_ts]` per line.
        #[arg(long)]
        messages: PathBuf,
        /// Clock model file (JSON map of client to model).
        #[arg(long)]
        models: PathBuf,
    },
    /// Replay an event trace through the online sequencer.
    Replay {
        /// Trace file: `M client local_ts id`, `H client local_ts`, `T now`.
        #[arg(long)]
        trace: PathBuf,
        /// Clock model file (JSON map of client to model).
        #[arg(long)]
        models: PathBuf,
        /// Force emission this long after a batch turns due, even without
        /// watermark cover.
        #[arg(long)]
        max_wait_us: Option<f64>,
    },
    /// Run a simulation sweep from a config or a previous run's manifest.
    Simulate {
        /// Sweep config JSON, or the manifest of an earlier run.
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(args: Cli) -> tommy::Result<()> {
    let stdout = io::stdout();
    let stderr = io::stderr();
    // Buffered so replay and order don't pay a syscall per line.
    let mut out_buf: Box<dyn Write> = match &args.output {
        Some(path) if !matches!(args.command, Command::Simulate { .. }) => {
            Box::new(io::BufWriter::new(std::fs::File::create(path)?))
        }
        _ => Box::new(io::BufWriter::new(stdout.lock())),
    };
    let mut status = stderr.lock();

    match args.command {
        Command::Probe { models, client_i, client_j, t_i, t_j } => {
            cli::cmd_probe(
                &models,
                &client_i,
                &client_j,
                t_i,
                t_j,
                args.resolution_us,
                &mut out_buf,
            )?;
        }
        Command::Order { messages, models } => {
            cli::cmd_order(
                &messages,
                &models,
                args.threshold,
                args.resolution_us,
                &mut out_buf,
                &mut status,
            )?;
        }
        Command::Replay { trace, models, max_wait_us } => {
            let config = OnlineConfig {
                threshold: args.threshold,
                p_safe: args.p_safe,
                resolution: args.resolution_us,
                max_wait: max_wait_us,
            };
            cli::cmd_replay(&trace, &models, config, &mut out_buf)?;
        }
        Command::Simulate { config } => {
            let output = args.output.ok_or_else(|| {
                tommy::Error::InvalidConfig("simulate needs --output for the CSV".into())
            })?;
            cli::cmd_simulate(&config, &output, args.seed, &mut status)?;
        }
    }
    out_buf.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let args = Cli::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
