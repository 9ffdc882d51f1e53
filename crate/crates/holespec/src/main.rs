//! Command-line frontend: config-driven simulation and analysis runs.

use clap::{Parser, Subcommand};
use holespec::config::parse_config;
use holespec::run::{self, RunError, Summary};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "holespec",
    about = "Spectral hole burning simulator and analysis pipeline",
    version
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's output.dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed override for noise generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress the key=value summary on stdout.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Burn a spectral hole and write the corrected hole spectrum.
    SimulateShb,
    /// Hole area versus readout delay, with the exponential fit.
    HoleDecay,
    /// Excitation spectrum of the thermal ensemble.
    SimulatePle,
    /// Lorentzian fit of the simulated hole.
    FitHole,
    /// Exponential fit of a decay-series CSV.
    FitDecay,
    /// Gaussian-mixture fit of the excitation spectrum.
    FitPle,
    /// Lifetime/quantum-yield pipeline and band bookkeeping.
    Photophysics,
    /// Chromaticity coordinates of the emission spectrum.
    Cie,
    /// Check the hole-burning regime conditions.
    Validate,
}

fn init_thread_pool() {
    if let Ok(v) = std::env::var("HOLESPEC_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                // ignore failure if a pool already exists
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn execute(cli: &Cli) -> Result<(Summary, bool), RunError> {
    let config_path = cli.config.as_deref().ok_or_else(|| RunError::Validation(
        "--config PATH is required".into(),
    ))?;
    let cfg = parse_config(config_path)?;
    let out_dir = cli.out.as_deref();
    let summary = match cli.command {
        Command::SimulateShb => run::simulate_shb(&cfg, out_dir, cli.seed)?,
        Command::HoleDecay => run::hole_decay(&cfg, out_dir, cli.seed)?,
        Command::SimulatePle => run::simulate_ple(&cfg, out_dir, cli.seed)?,
        Command::FitHole => run::fit_hole(&cfg, out_dir)?,
        Command::FitDecay => run::fit_decay(&cfg, out_dir)?,
        Command::FitPle => run::fit_ple(&cfg, out_dir)?,
        Command::Photophysics => run::photophysics_run(&cfg, out_dir)?,
        Command::Cie => run::cie(&cfg, out_dir)?,
        Command::Validate => return run::validate(&cfg),
    };
    Ok((summary, true))
}

fn main() -> ExitCode {
    init_thread_pool();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok((summary, pass)) => {
            if !cli.quiet {
                for (key, value) in &summary {
                    println!("{key}={value}");
                }
            }
            if pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
