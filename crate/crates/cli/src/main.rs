use std::path::PathBuf;

use clap::Parser;
use mfg_cli::{Command, Invocation};

/// Equilibrium solver and finite-game simulator for stationary mean field
/// games with singular controls.
#[derive(Debug, Parser)]
#[command(name = "mfg", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config override such as `sim.N=20` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Simulation seed; overrides `sim.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MFG_LOG", "error")).init();
    let args = Args::parse();
    let inv = Invocation {
        command: args.command,
        config: args.config,
        out: args.out,
        overrides: args.overrides,
        workers: args.workers,
        seed: args.seed,
    };
    std::process::exit(inv.run());
}
