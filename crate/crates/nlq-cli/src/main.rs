//! `nlq`: reproducible pipelines for the nonlinear-quadrature measurement
//! simulator. Subcommands share one TOML config; every run writes artifacts
//! plus a checksummed manifest, and replay mode makes reruns byte-identical.

mod commands;
mod config;
mod manifest;
mod records;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nlq_core::error::SimError;

use commands::CommandContext;
use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "nlq",
    about = "Simulation and analysis pipelines for an adaptive nonlinear quadrature measurement",
    version
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override the configured RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the configured output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Deterministic single-threaded mode; manifests omit timings.
    #[arg(long, global = true)]
    replay: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Monte-Carlo record file from the configured probe grid.
    Simulate,
    /// Emit theoretical detector states and variance tables.
    Povm,
    /// Reconstruct the binned measurement from a record file.
    Tomo {
        /// Record CSV (default: <out_dir>/records.csv).
        #[arg(long, value_name = "FILE")]
        input: Option<PathBuf>,
    },
    /// Rasterize a stored operator as a Wigner-function grid.
    Wigner {
        /// Operator JSON file (bare, detector-state, or element-list form).
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Element index when the input holds a reconstruction element list.
        #[arg(long)]
        element: Option<usize>,
    },
    /// Print the Gaussian-state variance bound for the configured gamma.
    Bound,
    /// Sweep the feedforward lookup table against the exact angle.
    LutCheck,
}

fn exit_for(err: &SimError) -> u8 {
    match err {
        SimError::InvalidConfig(_) | SimError::FileFormat(_) | SimError::RangeTooNarrow(_) => 2,
        SimError::Truncation(_)
        | SimError::GridTooNarrow { .. }
        | SimError::QuadratureNotConverged(_)
        | SimError::OptimizationDidNotConverge(_)
        | SimError::FitDegenerate(_) => 3,
        SimError::Io(_) | SimError::Csv(_) => 1,
    }
}

fn run(cli: &Cli) -> Result<(), SimError> {
    let config_path = cli.config.as_deref().ok_or_else(|| {
        SimError::InvalidConfig("--config <FILE> is required for every command".into())
    })?;
    let mut config = RunConfig::load(config_path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    std::fs::create_dir_all(&config.out_dir)?;
    // The hashed canonical form excludes the output location: the same
    // physics written elsewhere is the same run.
    let canonical = {
        let mut scrubbed = config.clone();
        scrubbed.out_dir = PathBuf::new();
        scrubbed.canonical_toml()?
    };
    let ctx = CommandContext {
        out_dir: config.out_dir.clone(),
        replay: cli.replay,
        canonical,
        config,
    };
    match &cli.command {
        Command::Simulate => commands::cmd_simulate(&ctx),
        Command::Povm => commands::cmd_povm(&ctx),
        Command::Tomo { input } => commands::cmd_tomo(&ctx, input.as_deref()),
        Command::Wigner { input, element } => commands::cmd_wigner(&ctx, input, *element),
        Command::Bound => commands::cmd_bound(&ctx),
        Command::LutCheck => commands::cmd_lut_check(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = if cli.replay {
        Some(1)
    } else {
        cli.threads
    };
    let outcome = match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build();
            match pool {
                Ok(pool) => pool.install(|| run(&cli)),
                Err(e) => {
                    eprintln!("nlq: cannot build thread pool: {e}");
                    return ExitCode::from(1);
                }
            }
        }
        None => run(&cli),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("nlq: {err}");
            ExitCode::from(exit_for(&err))
        }
    }
}
