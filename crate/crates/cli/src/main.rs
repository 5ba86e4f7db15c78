use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use porofem_cli::{default_out, execute, Command};

#[derive(Parser)]
#[command(name = "porofem", version, about = "Quasi-static poroelasticity on the unit square")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Time-step one configuration and write diagnostics and snapshots.
    Run(Common),
    /// Run a mesh-refinement study and write observed rates.
    Convergence(Common),
    /// Vary the storage coefficient and write distances between runs.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override one config entry, e.g. `--set nx=16`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Run(a) => (Command::Run, a),
        Cmd::Convergence(a) => (Command::Convergence, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
    };
    let out = args.out.unwrap_or_else(default_out);
    match execute(command, args.config.as_deref(), &args.set, &out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
