//! Command-line front end: experiment configs in, CSV and JSON tables out.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;

use std::path::{Path, PathBuf};

use mfg_core::{MfgError, Result};
use serde::Serialize;

pub use commands::{cmd_abelian_sweep, cmd_sensitivity, cmd_simulate, cmd_solve, cmd_validate};
pub use config::ExperimentConfig;
pub use output::Outputs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Solve,
    AbelianSweep,
    Sensitivity,
    Simulate,
    Validate,
}

pub fn run_command(cmd: Command, cfg: &ExperimentConfig) -> Result<Outputs> {
    match cmd {
        Command::Solve => cmd_solve(cfg),
        Command::AbelianSweep => cmd_abelian_sweep(cfg),
        Command::Sensitivity => cmd_sensitivity(cfg),
        Command::Simulate => cmd_simulate(cfg),
        Command::Validate => cmd_validate(cfg),
    }
}

pub const EXIT_NUMERICAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

pub fn exit_code(e: &MfgError) -> i32 {
    if e.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_NUMERICAL
    }
}

fn error_kind(e: &MfgError) -> &'static str {
    match e {
        MfgError::Domain(_) => "domain",
        MfgError::AssumptionViolation(_) => "assumption_violation",
        MfgError::Numerical(_) => "numerical",
        MfgError::Truncation { .. } => "truncation",
        MfgError::Divergence(_) => "divergence",
        MfgError::Config(_) => "config",
        MfgError::Io(_) => "io",
        MfgError::Csv(_) => "csv",
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: String,
    pub message: String,
    pub exit_code: i32,
}

impl ErrorReport {
    pub fn from_error(e: &MfgError) -> Self {
        Self {
            error: error_kind(e).into(),
            message: e.to_string(),
            exit_code: exit_code(e),
        }
    }

    pub fn check_failure(message: String) -> Self {
        Self {
            error: "check_failed".into(),
            message,
            exit_code: EXIT_NUMERICAL,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}", self.error))
    }
}

/// Everything the binary does after argument parsing: load and validate the
/// config, run the command, write the files. Returns the process exit code.
pub struct Invocation {
    pub command: Command,
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
}

impl Invocation {
    pub fn load_config(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("sim.seed={seed}"));
        }
        let cfg = ExperimentConfig::load(self.config.as_deref(), &overrides)?;
        let out = self
            .out
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        output::check_output_dir(&out)?;
        Ok((cfg, out))
    }

    fn execute(&self) -> std::result::Result<PathBuf, ErrorReport> {
        let (cfg, out) = self
            .load_config()
            .map_err(|e| ErrorReport::from_error(&e))?;
        let outputs = match self.workers {
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| ErrorReport::from_error(&MfgError::Config(e.to_string())))?;
                pool.install(|| run_command(self.command, &cfg))
            }
            None => run_command(self.command, &cfg),
        }
        .map_err(|e| ErrorReport::from_error(&e))?;
        write(&outputs, &out).map_err(|e| ErrorReport::from_error(&e))?;
        match outputs.failure {
            Some(msg) => Err(ErrorReport::check_failure(msg)),
            None => Ok(out),
        }
    }

    /// Runs and reports: the output directory on stdout, or an error JSON on
    /// stderr.
    pub fn run(&self) -> i32 {
        match self.execute() {
            Ok(dir) => {
                println!(
                    "{}",
                    serde_json::json!({ "status": "ok", "output_dir": dir })
                );
                0
            }
            Err(report) => {
                eprintln!("{}", report.to_json());
                report.exit_code
            }
        }
    }
}

fn write(outputs: &Outputs, dir: &Path) -> Result<()> {
    outputs.write_to(dir)?;
    for name in outputs.names() {
        log::info!("wrote {}", dir.join(name).display());
    }
    Ok(())
}
