//! Command-line front end: scenario files, presets and the pipeline runner.

pub mod config;
pub mod pipeline;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{parse_scenario, parse_scenario_str, ConfigError, Scenario, ScenarioConfig, ScenarioKind};
pub use pipeline::{run_pipeline, run_stages, PipelineOutcome, Stage, EXIT_DIVERGED, EXIT_INFEASIBLE, EXIT_OK, EXIT_USAGE, EXIT_VERIFICATION};

pub const PRESET_SCENARIO_1: &str = include_str!("../../presets/paper4_scenario1.json");
pub const PRESET_SCENARIO_2: &str = include_str!("../../presets/paper4_scenario2.json");

/// Environment variable read when `--seed` is not given.
pub const SEED_ENV: &str = "DISTFDI_SEED";

/// The built-in four-agent example: 1 for actuator faults, 2 for sensor faults.
pub fn preset(scenario: u8) -> Result<Scenario, ConfigError> {
    match scenario {
        1 => parse_scenario_str(PRESET_SCENARIO_1),
        2 => parse_scenario_str(PRESET_SCENARIO_2),
        other => Err(ConfigError::Validation(format!("unknown preset scenario {other}, expected 1 or 2"))),
    }
}

#[derive(Debug, Parser)]
#[command(name = "distfdi", version, about = "Distributed fault detection and isolation for networks of LTI agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Overrides {
    /// Master seed; falls back to DISTFDI_SEED, then to the scenario file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Integration step in seconds.
    #[arg(long, global = true)]
    pub h: Option<f64>,
    /// Simulated horizon in seconds.
    #[arg(long, global = true)]
    pub horizon: Option<f64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Design every agent's observer and write synthesis_report.json.
    Synthesize {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Synthesize, then simulate and write trajectory.csv.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a stored trajectory and isolate faults.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        /// Reuse thresholds instead of recalibrating.
        #[arg(long)]
        thresholds: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Full pipeline: synthesize, simulate, calibrate, evaluate, isolate.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Full pipeline on a built-in four-agent preset.
    ReproducePaper {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        scenario: u8,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn resolve_seed(flag: Option<u64>) -> anyhow::Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => Ok(Some(v.trim().parse().map_err(|e| anyhow::anyhow!("{SEED_ENV}={v:?} is not a seed: {e}"))?)),
        Err(_) => Ok(None),
    }
}

fn load(base: Result<Scenario, ConfigError>, o: &Overrides) -> anyhow::Result<Scenario> {
    let scn = base?;
    Ok(scn.with_overrides(resolve_seed(o.seed)?, o.h, o.horizon)?)
}

/// Runs one command and returns the process exit code.
pub fn execute(cli: Cli) -> anyhow::Result<i32> {
    let (outcome, out) = match cli.command {
        Command::Synthesize { config, overrides } => {
            let scn = load(parse_scenario(&config), &overrides)?;
            (run_stages(&scn, &overrides.out, Stage::Synthesize)?, overrides.out)
        }
        Command::Simulate { config, overrides } => {
            let scn = load(parse_scenario(&config), &overrides)?;
            (run_stages(&scn, &overrides.out, Stage::Simulate)?, overrides.out)
        }
        Command::Evaluate { config, trajectory, thresholds, overrides } => {
            let scn = load(parse_scenario(&config), &overrides)?;
            (pipeline::evaluate_stored(&scn, &trajectory, thresholds.as_deref(), &overrides.out)?, overrides.out)
        }
        Command::Run { config, overrides } => {
            let scn = load(parse_scenario(&config), &overrides)?;
            (run_pipeline(&scn, &overrides.out)?, overrides.out)
        }
        Command::ReproducePaper { scenario, overrides } => {
            let scn = load(preset(scenario), &overrides)?;
            (run_pipeline(&scn, &overrides.out)?, overrides.out)
        }
    };
    print!("{}", outcome.summary);
    eprintln!("outputs written to {}", out.display());
    Ok(outcome.exit_code)
}
