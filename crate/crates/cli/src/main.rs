use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;

/// Curvature, Einstein metrics and Ricci flow on homogeneous spaces.
#[derive(Debug, Parser)]
#[command(name = "rflab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FlowKindArg {
    Rf,
    Nrf,
    Prf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Engine,
    Model,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the algebraic consistency of a space (catalog id or JSON file).
    Validate { space: String },
    /// Search for Einstein metrics from random diagonal seeds.
    Einstein {
        space: String,
        #[arg(long, default_value_t = 16)]
        seeds: usize,
        #[arg(long, default_value_t = 1)]
        rng_seed: u64,
        /// Defaults to the structure-constant engine when available.
        #[arg(long, value_enum)]
        backend: Option<BackendArg>,
    },
    /// Hessian spectrum and coindex at a point (coefficients or a known label).
    Coindex {
        space: String,
        #[arg(long)]
        at: String,
        #[arg(long, value_enum)]
        backend: Option<BackendArg>,
    },
    /// Integrate a flow and write the trajectory CSV with its manifest.
    Flow {
        space: String,
        #[arg(long, value_enum)]
        kind: FlowKindArg,
        /// Module scales, invariant-basis coefficients, or a known label.
        #[arg(long)]
        from: String,
        /// Einstein metric on the base (projected flow only).
        #[arg(long)]
        base: Option<String>,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        t0: f64,
        #[arg(long, allow_negative_numbers = true)]
        t1: f64,
        #[arg(long, default_value_t = 1e-10)]
        rtol: f64,
        #[arg(long, default_value_t = 1e-10)]
        atol: f64,
        #[arg(long, default_value_t = 0.1)]
        max_step: f64,
        /// Output CSV path; the manifest goes next to it.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Shoot ancient solutions from the collapsed fixed point of a fibration.
    Ancient {
        fibration: String,
        #[arg(long)]
        base_einstein: String,
        /// Number of random directions to shoot.
        #[arg(long, conflicts_with = "dir")]
        scan: Option<usize>,
        /// One direction, as coefficients over the unstable basis.
        #[arg(long)]
        dir: Option<String>,
        #[arg(long, default_value_t = 1e-7)]
        eps: f64,
        #[arg(long, default_value_t = 1)]
        rng_seed: u64,
        /// JSON-lines catalog of shots.
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Directory for per-shot backward trajectories.
        #[arg(long)]
        trajectories: Option<PathBuf>,
    },
    /// Downsample selected columns of a trajectory CSV.
    Plotdata {
        csv: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        columns: Vec<String>,
        #[arg(long, default_value_t = 500)]
        max_points: usize,
    },
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("RFLAB_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| anyhow::anyhow!("RFLAB_THREADS must be a positive integer"))?;
        if n == 0 {
            anyhow::bail!("RFLAB_THREADS must be a positive integer");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    configure_threads()?;
    let argv: Vec<String> = std::env::args().collect();
    match cli.command {
        Command::Validate { space } => commands::validate(&space),
        Command::Einstein { space, seeds, rng_seed, backend } => commands::einstein(&space, seeds, rng_seed, backend),
        Command::Coindex { space, at, backend } => commands::coindex(&space, &at, backend),
        Command::Flow { space, kind, from, base, t0, t1, rtol, atol, max_step, out } => {
            let args = commands::FlowArgs { space, kind, from, base, t0, t1, rtol, atol, max_step, out };
            commands::flow(&args, &argv)
        }
        Command::Ancient { fibration, base_einstein, scan, dir, eps, rng_seed, out, trajectories } => {
            let args = commands::AncientArgs { fibration, base_einstein, scan, dir, eps, rng_seed, out, trajectories };
            commands::ancient(&args, &argv)
        }
        Command::Plotdata { csv, columns, max_points } => commands::plotdata(&csv, &columns, max_points),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            // Bad input is a usage error; anything else is a runtime failure.
            let usage = err.downcast_ref::<rflab::Error>().map(|e| matches!(e, rflab::Error::Input(_) | rflab::Error::Format(_))).unwrap_or(false)
                || err.downcast_ref::<commands::UsageError>().is_some();
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
