use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use solenoid::commands::{cmd_evolve, cmd_fluxmap, cmd_oracle_check, cmd_sweep, load_config, CliError};
use solenoid::config::RunConfig;

#[derive(Parser)]
#[command(name = "solenoid", version, about = "Laser-induced solenoidal gauge fields on optical lattices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Io {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Plaquette flux map of a square lattice.
    Fluxmap(Io),
    /// Evolve a wavepacket and score the interference at the probe.
    Evolve(Io),
    /// One evolution per lambda in `sweep.lambdas`, run in parallel.
    Sweep(Io),
    /// Compare the integrator against exact diagonalization.
    OracleCheck(Io),
}

fn run<T: Serialize>(io: &Io, f: impl FnOnce(&RunConfig, &Path) -> Result<T, CliError>) -> Result<T, CliError> {
    let cfg = load_config(&io.config)?;
    f(&cfg, &io.out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fluxmap(io) => run(io, cmd_fluxmap).map(|s| {
            println!("centre cell phase {:.12}, max far-cell flux {:.3e}", s.centre_cell_phase, s.max_far_flux);
        }),
        Command::Evolve(io) => run(io, cmd_evolve).map(|s| {
            println!("probe max {:.3e} at t = {}: {:?}", s.probe.metrics.max, s.probe.metrics.time_of_max, s.probe.verdict);
        }),
        Command::Sweep(io) => run(io, cmd_sweep).map(|rs| {
            for s in rs {
                println!("lambda {}: probe max {:.3e}: {:?}", s.lambda, s.probe.metrics.max, s.probe.verdict);
            }
        }),
        Command::OracleCheck(io) => run(io, cmd_oracle_check).map(|r| {
            println!("max oracle error {:.3e} (tolerance {:e})", r.max_error, r.tolerance);
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
