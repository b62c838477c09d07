use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "tomoplan", version, about = "Optimal experiment design for quantum state tomography")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a measurement spec for completeness, positivity and Hermiticity.
    Validate(ValidateArgs),
    /// Compute an experiment design.
    Design(DesignArgs),
    /// Run a Monte-Carlo tomography campaign over a grid of qubit states.
    Simulate(SimulateArgs),
    /// Re-run the command recorded in an output file's manifest.
    Replay(ReplayArgs),
}

// `out` is never part of a manifest: the same run written elsewhere must
// produce the same bytes.

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ValidateArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignMethod {
    /// State-specific design minimizing tr F⁻¹.
    Oed,
    /// Design from the Fisher information averaged over a ball of states.
    AvgOedFisher,
    /// Design minimizing the ball average of tr F⁻¹ (minimal setups).
    AvgOedCrb,
    /// Design minimizing the variance of tr F⁻¹ over the ball (minimal setups).
    Odt,
    /// State-specific design minimizing the constrained bound in the
    /// Cholesky parameterization.
    OedCholesky,
}

impl DesignMethod {
    pub fn name(&self) -> &'static str {
        match self {
            DesignMethod::Oed => "oed",
            DesignMethod::AvgOedFisher => "avg-oed-fisher",
            DesignMethod::AvgOedCrb => "avg-oed-crb",
            DesignMethod::Odt => "odt",
            DesignMethod::OedCholesky => "oed-cholesky",
        }
    }

    pub fn needs_state(&self) -> bool {
        matches!(self, DesignMethod::Oed | DesignMethod::OedCholesky)
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DesignArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, value_enum)]
    pub method: DesignMethod,
    /// State file (`oed`, `oed-cholesky`).
    #[arg(long)]
    pub state: Option<PathBuf>,
    /// Ball radius for the averaging methods: `min`, `max` or a number.
    #[arg(long)]
    pub radius: Option<String>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Design file written by `tomoplan design` (or a bare JSON array);
    /// uniform when omitted.
    #[arg(long)]
    pub design: Option<PathBuf>,
    /// Grid nodes as `radial,polar,azimuthal`.
    #[arg(long, default_value = "6,6,6")]
    pub grid: String,
    #[arg(long, default_value_t = 1000)]
    pub ntot: u64,
    #[arg(long, default_value_t = 2000)]
    pub runs: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated subset of `inv,lsq,ml`.
    #[arg(long, default_value = "inv,lsq,ml")]
    pub estimators: String,
    /// Also record the ML error of the Cholesky vector and the constrained bound.
    #[arg(long)]
    #[serde(default)]
    pub theta: bool,
    /// Repeat the campaign with the uniform design and report the rms
    /// improvement per estimator.
    #[arg(long)]
    #[serde(default)]
    pub compare_uniform: bool,
    /// Output prefix; writes `<out>.csv` and `<out>.json`.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// Any output file (JSON or CSV) carrying a manifest.
    #[arg(long)]
    pub from: PathBuf,
    /// Output path (prefix for `simulate`); stdout when omitted where allowed.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
