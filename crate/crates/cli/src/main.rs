use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mobl_cli::commands::{cmd_run, cmd_sweep, cmd_verify, verify::Fault};

#[derive(Parser)]
#[command(
    name = "mobl",
    version,
    about = "Multi-objective bilevel optimization runs and checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configured optimization and write its trace and record.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override a config value, e.g. `--set solver.outer_iters=100`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run one optimization per preference of a grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `preferred`, `extreme`, `uniform`, `r1:0.1,0.5,...` or `0.2,0.8;0.5,0.5`.
        #[arg(long)]
        grid: String,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Check oracle, estimator, subproblem and counter invariants.
    Verify {
        /// Also run the slower decay, consistency and rate suites.
        #[arg(long)]
        full: bool,
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<FaultArg>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    AsymmetricHvp,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, set } => cmd_run(&config, &set),
        Command::Sweep {
            config,
            grid,
            jobs,
            set,
        } => cmd_sweep(&config, &set, &grid, jobs),
        Command::Verify { full, inject_fault } => cmd_verify(
            full,
            inject_fault.map(|f| match f {
                FaultArg::AsymmetricHvp => Fault::AsymmetricHvp,
            }),
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
