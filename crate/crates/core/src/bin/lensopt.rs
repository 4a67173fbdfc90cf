use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use lensopt::config::RunConfig;
use lensopt::error::Error;
use lensopt::run::{self, RunOptions};

#[derive(Parser)]
#[command(name = "lensopt", version, about = "Acoustic lens simulation and shape optimization")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Single-threaded run with reproducible output.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Write a field snapshot every k steps (overrides output.snapshot_every).
    #[arg(long, global = true)]
    snapshot_every: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Forward solve on the initial lens.
    Simulate {
        /// Also store the full state history (state.bin) for `adjoint`.
        #[arg(long)]
        save_state: bool,
    },
    /// Adjoint solve and shape gradient on the initial lens.
    Adjoint {
        /// Stored forward history from `simulate --save-state`.
        #[arg(long)]
        forward: Option<PathBuf>,
    },
    /// Gradient descent on the lens boundary.
    Optimize,
    /// Write the tracking data of the run as a stored history.
    MakeTarget,
    /// Compare the shape gradient with central finite differences.
    Gradcheck {
        /// Number of sampled design dofs.
        #[arg(long, default_value_t = 3)]
        samples: usize,
        /// Finite-difference steps relative to the domain height.
        #[arg(long, value_delimiter = ',', default_values_t = [1e-4, 1e-5, 1e-6])]
        taus: Vec<f64>,
    },
    /// Print the resolved configuration as TOML.
    Config,
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) | Error::Parse(_) => "config",
        Error::Io { .. } => "io",
        Error::StepFailure { .. } | Error::NonFinite { .. } | Error::Singular { .. } => "solver",
        Error::Infeasible(_) | Error::DegenerateGeometry { .. } | Error::Geometry(_) => "geometry",
        _ => "internal",
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = RunConfig::load(cli.common.config.as_deref())?;
    if let Some(k) = cli.common.snapshot_every {
        cfg.output.snapshot_every = k;
    }
    let workers = if cli.common.deterministic { 1 } else { cli.common.workers };
    rayon::ThreadPoolBuilder::new().num_threads(workers).build_global().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let opts = RunOptions { out: cli.common.out, deterministic: cli.common.deterministic, workers: rayon::current_num_threads() };
    let manifest = match cli.command {
        Command::Simulate { save_state } => run::simulate(&cfg, &opts, save_state)?,
        Command::Adjoint { forward } => run::adjoint(&cfg, &opts, forward.as_deref())?,
        Command::Optimize => run::optimize(&cfg, &opts)?.0,
        Command::MakeTarget => run::make_target(&cfg, &opts)?,
        Command::Gradcheck { samples, taus } => {
            let (m, report) = run::gradcheck(&cfg, &opts, samples, &taus)?;
            for r in &report.rows {
                println!("dof {:4}  adjoint {:+.6e}  fd {:+.6e}  mismatch {:.3e}", r.dof, r.adjoint, r.fd.last().copied().unwrap_or(f64::NAN), r.mismatch());
            }
            m
        }
        Command::Config => {
            print!("{}", cfg.to_toml()?);
            return Ok(());
        }
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({ "command": manifest.command, "summary": manifest.summary, "outputs": manifest.outputs })).unwrap_or_default()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = json!({ "error": kind(&e), "message": e.to_string() });
            eprintln!("{report}");
            ExitCode::FAILURE
        }
    }
}
