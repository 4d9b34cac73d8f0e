//! Command-line driver for the mollified-entropy experiments and checks.
//!
//! ```text
//! mollivi <experiment> [--config FILE] [--dims 1,2,4] [--seeds 0,1] [--repeats R] [--out DIR] [--execute]
//! ```
//!
//! Exit codes: 0 when every check passes, 1 when a check fails, 2 for usage,
//! configuration or I/O errors (including missing runs without `--execute`),
//! 3 when a run aborts on a non-finite value.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, ValueEnum};

pub use commands::{dispatch, Outcome, Plan};
pub use config::ExperimentConfig;
pub use error::{exit, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    /// Optimizer runs with full artifacts.
    Run,
    /// Second moment along the iterations.
    SecondMoment,
    /// Running average of squared gradient norms and its rate.
    AvgGradient,
    /// KL of the first-n-atom approximation against its bound.
    Quantization,
    /// Per-step descent inequality.
    CheckDescent,
    /// Mollified Hessian limit on the Gaussian family.
    CheckHessian,
    /// Scalar inequalities.
    CheckLemmas,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Run => "run",
            Experiment::SecondMoment => "second-moment",
            Experiment::AvgGradient => "avg-gradient",
            Experiment::Quantization => "quantization",
            Experiment::CheckDescent => "check-descent",
            Experiment::CheckHessian => "check-hessian",
            Experiment::CheckLemmas => "check-lemmas",
        }
    }
}

#[derive(Debug, Clone, Parser)]
#[command(name = "mollivi", version, about = "Mollified-entropy particle variational inference")]
pub struct Cli {
    #[arg(value_enum)]
    pub experiment: Experiment,

    /// Flat TOML configuration; flags below take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,

    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,

    #[arg(long)]
    pub repeats: Option<usize>,

    #[arg(long, default_value = "out")]
    pub out: PathBuf,

    /// Execute missing runs instead of failing.
    #[arg(long)]
    pub execute: bool,
}

impl Cli {
    /// Merges config file and flags into a plan. `env_seed` is the value of
    /// the seed environment variable, if set.
    pub fn plan(&self, env_seed: Option<&str>) -> Result<Plan, CliError> {
        let mut config = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(d) = &self.dims {
            config.dims = d.clone();
        }
        if let Some(r) = self.repeats {
            config.repeats = r;
        }
        if let Some(s) = &self.seeds {
            config.seeds = Some(s.clone());
        }
        config.validate()?;
        let seeds = config.resolve_seeds(env_seed)?;
        Ok(Plan {
            experiment: self.experiment,
            dims: config.dims.clone(),
            seeds,
            config,
            out: self.out.clone(),
            execute: self.execute,
        })
    }
}

/// Runs a parsed command line and returns the
/// process exit code, printing summaries to stdout and errors to stderr.
pub fn run_cli(cli: &Cli, env_seed: Option<&str>) -> i32 {
    let result = cli.plan(env_seed).and_then(|plan| dispatch(&plan));
    match result {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            if outcome.status.is_failure() {
                exit::CHECK_FAILED
            } else {
                exit::PASS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
