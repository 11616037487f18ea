//! `covsteer` — data-driven covariance steering pipeline.
//!
//! Subcommands mirror the four experiment stages plus canned scenarios:
//! `collect` runs an excitation experiment and writes the dataset,
//! `estimate` fits the noise realization (and optionally its covariance),
//! `synthesize` produces a steering policy (data-driven, robust, or
//! model-based), `validate` evaluates a policy on the true system with
//! Monte Carlo rollouts and plots, and `reproduce` chains everything for the
//! built-in benchmark scenarios.

mod config;
mod render;
mod stages;

use clap::{Args, Parser, Subcommand, ValueEnum};
use config::{load_raw, resolve, CliError, EstimatorChoice, ModeChoice, Overrides};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "covsteer",
    version,
    about = "Covariance steering for unknown linear stochastic systems, straight from data"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Default, Args)]
struct CommonArgs {
    /// Experiment configuration (JSON). Without it, the double-integrator
    /// preset is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// RNG seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Controller mode override.
    #[arg(long, value_enum)]
    mode: Option<ModeChoice>,
    /// Estimator override.
    #[arg(long, value_enum)]
    estimator: Option<EstimatorChoice>,
    /// Risk level override (0 < delta < 1).
    #[arg(long)]
    delta: Option<f64>,
    /// Monte Carlo trial count (or coverage seed count) override.
    #[arg(long)]
    trials: Option<u32>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            mode: self.mode,
            estimator: self.estimator,
            delta: self.delta,
            trials: self.trials,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ReproId {
    /// Nominal benchmark: model-based and robust data-driven side by side.
    Fig1a,
    /// Dynamics mismatch: data from the perturbed system, nominal design model.
    Fig1b,
    /// Disturbance mismatch with joint noise-covariance estimation.
    Fig3,
    /// Chi-square error-bound coverage study.
    Coverage,
}

impl ReproId {
    fn as_str(self) -> &'static str {
        match self {
            ReproId::Fig1a => "fig1a",
            ReproId::Fig1b => "fig1b",
            ReproId::Fig3 => "fig3",
            ReproId::Coverage => "coverage",
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the data-collection experiment and write a dataset file.
    Collect {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Estimate the noise realization from a dataset file.
    Estimate {
        /// Dataset JSON produced by `collect`.
        dataset: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
        /// Compare the estimate against the stored true noise realization.
        #[arg(long)]
        oracle: bool,
    },
    /// Synthesize a steering policy from a dataset and an estimate.
    Synthesize {
        /// Dataset JSON produced by `collect`.
        dataset: PathBuf,
        /// Estimate JSON produced by `estimate`.
        estimate: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evaluate a policy on the (optionally perturbed) true system.
    Validate {
        /// Policy JSON produced by `synthesize`.
        policy: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run a canned scenario end to end and emit a manifest.
    Reproduce {
        #[arg(value_enum)]
        id: ReproId,
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Collect { common } => {
            let r = resolve(load_raw(common.config.as_deref())?, &common.overrides())?;
            stages::stage_collect(&r).map(|_| ())
        }
        Cmd::Estimate {
            dataset,
            common,
            oracle,
        } => {
            let r = resolve(load_raw(common.config.as_deref())?, &common.overrides())?;
            stages::stage_estimate(&r, &dataset, oracle).map(|_| ())
        }
        Cmd::Synthesize {
            dataset,
            estimate,
            common,
        } => {
            let r = resolve(load_raw(common.config.as_deref())?, &common.overrides())?;
            let mode = r.mode;
            stages::stage_synthesize(&r, &dataset, &estimate, mode, false).map(|_| ())
        }
        Cmd::Validate { policy, common } => {
            let r = resolve(load_raw(common.config.as_deref())?, &common.overrides())?;
            stages::stage_validate(&r, &policy).map(|_| ())
        }
        Cmd::Reproduce { id, common } => stages::run_reproduce(id.as_str(), &common.overrides()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
