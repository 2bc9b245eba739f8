use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use blackstock_core::compare::{compare_runs, Metric};
use blackstock_core::config::{ConfigError, SimulationConfig};
use blackstock_core::experiment::{run_config, RunError};
use blackstock_core::presets::{run_preset, PresetId, Scale};

const EXIT_VALIDATION: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "blackstock", version, about = "Nonlinear acoustic wave simulations with isogeometric splines")]
struct Cli {
    /// Worker threads for assembly and preset sweeps.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single configuration file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one of the catalogued experiments.
    Preset {
        #[arg(long)]
        id: PresetId,
        #[arg(long, default_value = "desk")]
        scale: Scale,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the profile snapshots of two run directories.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value = "max_abs")]
        metric: Metric,
        /// Interpolate profiles of `b` onto the grid of `a` when they differ.
        #[arg(long)]
        resample: bool,
        /// Write the error table here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &RunError) -> u8 {
    match e {
        RunError::Config(ConfigError::Io { .. }) => EXIT_IO,
        RunError::Config(_) => EXIT_VALIDATION,
        RunError::Diverged { .. } => EXIT_DIVERGED,
        RunError::Io { .. } => EXIT_IO,
        RunError::Diagnostics(_) | RunError::Geometry(_) => EXIT_VALIDATION,
    }
}

fn run(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = SimulationConfig::load(&config)?;
            let s = run_config(&cfg, Some(&out))?;
            println!(
                "{}: {} steps, mean iterations {:.2}, {:.2} s",
                s.name,
                s.steps_done,
                s.mean_iterations(),
                s.wall_time.as_secs_f64()
            );
        }
        Command::Preset { id, scale, out } => {
            let r = run_preset(id, scale, Some(&out), cli.threads)?;
            for run in &r.runs {
                println!("{}: mean iterations {:.2}, {:.2} s", run.name, run.mean_iterations(), run.wall_time.as_secs_f64());
            }
            for (k, v) in &r.metrics {
                println!("{k} = {v:.6e}");
            }
        }
        Command::Compare { a, b, metric, resample, out } => {
            let report = compare_runs(&a, &b, metric, resample)?;
            match out {
                Some(p) => std::fs::write(&p, report.to_csv()).map_err(|source| RunError::Io {
                    path: p.display().to_string(),
                    source,
                })?,
                None => print!("{}", report.to_csv()),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        // assembly loops use the global pool
        blackstock_core::init_threads(n);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
