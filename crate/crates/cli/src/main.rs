//! `brwre`: experiment runner for branching random walks in random
//! environment.
//!
//! Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 acceptance
//! failure.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("numerical failure: {0}")]
    Numerical(brwre::Error),
    #[error("acceptance failure: {0}")]
    Acceptance(String),
}

impl From<brwre::Error> for CliError {
    fn from(e: brwre::Error) -> Self {
        if e.is_usage() {
            CliError::Usage(e.to_string())
        } else {
            CliError::Numerical(e)
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(format!("i/o: {e}"))
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Acceptance(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "brwre", version, about = "Branching random walk in random environment: PAM, FKPP and Monte Carlo experiments")]
pub struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true, env = "BRWRE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, env = "BRWRE_SEED")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "BRWRE_OUT", default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for replica-level parallelism (default: all cores).
    #[arg(long, global = true, env = "BRWRE_WORKERS")]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample an environment and store it.
    Env,
    /// Lyapunov curve, critical and front velocities, and the VEL verdict.
    Lyapunov,
    /// Parabolic Anderson model run: snapshots, fronts and T_n.
    Pam {
        /// Environment file instead of sampling one.
        #[arg(long)]
        env: Option<PathBuf>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Stop after this many integration steps, leaving a checkpoint.
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Fisher-KPP fronts and the duality table.
    Fkpp {
        #[arg(long)]
        env: Option<PathBuf>,
        /// Skip the Monte Carlo duality table.
        #[arg(long)]
        no_duality: bool,
    },
    /// Monte Carlo replicas of the branching walk.
    Sim {
        #[arg(long)]
        env: Option<PathBuf>,
    },
    /// Acceptance suites: `calibration`, `fast`, `full`, or a comma list of
    /// criterion numbers.
    Verify {
        #[arg(long, env = "BRWRE_SUITE", default_value = "calibration")]
        suite: String,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: worker pool: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct() {
        let usage = CliError::from(brwre::Error::InvalidArgument("x".into()));
        let acceptance = CliError::Acceptance("criterion 4".into());
        assert_eq!((usage.code(), acceptance.code()), (1, 3));
        assert_eq!(CliError::Numerical(brwre::Error::OutsideEnvironment(3)).code(), 2);
    }

    #[test]
    fn suites_resolve_to_criteria() {
        assert_eq!(commands::suite_criteria("calibration").unwrap(), None);
        assert_eq!(commands::suite_criteria("fast").unwrap(), Some(vec![1, 2, 3, 4, 12]));
        assert_eq!(commands::suite_criteria("full").unwrap().unwrap().len(), 12);
        assert_eq!(commands::suite_criteria("5, 7").unwrap(), Some(vec![5, 7]));
        assert!(commands::suite_criteria("13").is_err());
    }
}
