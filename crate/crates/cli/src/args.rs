use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use csmart::covariance::{IccMode, Structure, VarianceMode};
use csmart::gee::CovarianceFlags;
use csmart::sandwich::{FsaConfig, Preset, Reference};
use csmart::weights::WeightMode;

#[derive(Debug, Parser)]
#[command(name = "csmart", version, about = "Weighted GEE analysis and coverage simulation for clustered SMARTs")]
pub struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one trial dataset and report coefficients and pairwise effects.
    Analyze(AnalyzeArgs),
    /// Run a Monte Carlo coverage experiment from a design file.
    Simulate(SimulateArgs),
    /// Run the oracle suite and report every check with its tolerance.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FsaChoice {
    Minimal,
    OnTheShelf,
    Proposed,
    Full,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightsArg {
    Known,
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CovArg {
    Independence,
    Exchangeable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VarArg {
    Homogeneous,
    PerRegimen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IccArg {
    Shared,
    PerRegimen,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Adjustment preset; repeat for several report blocks.
    #[arg(long = "fsa", value_enum)]
    pub fsa: Vec<FsaChoice>,

    /// Custom preset: scale by n/(n − p − q).
    #[arg(long)]
    pub fsa_dof: bool,

    /// Custom preset: leverage-corrected cluster scores.
    #[arg(long)]
    pub fsa_bias: bool,

    /// Custom preset: t reference with n − p − q degrees of freedom.
    #[arg(long)]
    pub fsa_t: bool,

    #[arg(long, value_enum, default_value = "known")]
    pub weights: WeightsArg,

    #[arg(long = "cov", value_enum, default_value = "exchangeable")]
    pub cov: CovArg,

    #[arg(long = "var", value_enum, default_value = "per-regimen")]
    pub var: VarArg,

    #[arg(long = "icc", value_enum, default_value = "per-regimen")]
    pub icc: IccArg,

    /// Confidence level of every interval.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Member-level trial CSV.
    pub data: PathBuf,

    /// Report CSV path; an aligned `.txt` is written beside it.
    #[arg(short, long)]
    pub out: Option<PathBuf>,

    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Design JSON.
    pub design: PathBuf,

    /// Table CSV path; `.detail.csv` and `.txt` are written beside it.
    #[arg(short, long)]
    pub out: PathBuf,

    /// Base seed; replaces the design's own.
    #[arg(long)]
    pub seed: u64,

    /// Thread count; all cores when omitted.
    #[arg(long)]
    pub workers: Option<usize>,

    /// Replications per point; replaces the design's own.
    #[arg(long)]
    pub replications: Option<usize>,

    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Also write the reports as JSON lines.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

/// A labelled adjustment set.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjustment {
    pub label: String,
    pub fsa: FsaConfig,
}

impl ModelArgs {
    pub fn covariance(&self) -> CovarianceFlags {
        CovarianceFlags {
            structure: match self.cov {
                CovArg::Independence => Structure::Independence,
                CovArg::Exchangeable => Structure::Exchangeable,
            },
            variance_mode: match self.var {
                VarArg::Homogeneous => VarianceMode::Homogeneous,
                VarArg::PerRegimen => VarianceMode::PerRegimen,
            },
            icc_mode: match self.icc {
                IccArg::Shared => IccMode::Shared,
                IccArg::PerRegimen => IccMode::PerRegimen,
            },
        }
    }

    pub fn weight_mode(&self) -> WeightMode {
        match self.weights {
            WeightsArg::Known => WeightMode::Known,
            WeightsArg::Estimated => WeightMode::Estimated,
        }
    }

    /// Requested adjustments in flag order, `fallback` when none are given.
    /// Custom switches without `--fsa custom` are a usage error.
    pub fn adjustments(&self, fallback: &[Preset]) -> Result<Vec<Adjustment>, String> {
        let custom_flags = self.fsa_dof || self.fsa_bias || self.fsa_t;
        if custom_flags && !self.fsa.contains(&FsaChoice::Custom) {
            return Err("--fsa-dof, --fsa-bias and --fsa-t need --fsa custom".into());
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(format!("--level must lie in (0, 1), got {}", self.level));
        }
        let preset = |p: Preset| Adjustment {
            label: p.label().to_string(),
            fsa: p.config(),
        };
        if self.fsa.is_empty() {
            return Ok(fallback.iter().copied().map(preset).collect());
        }
        let mut out: Vec<Adjustment> = Vec::new();
        for choice in &self.fsa {
            let adj = match choice {
                FsaChoice::Minimal => preset(Preset::Minimal),
                FsaChoice::OnTheShelf => preset(Preset::OnTheShelf),
                FsaChoice::Proposed => preset(Preset::Proposed),
                FsaChoice::Full => preset(Preset::Full),
                FsaChoice::Custom => {
                    let fsa = FsaConfig {
                        dof_scale: self.fsa_dof,
                        bias_correct: self.fsa_bias,
                        reference: if self.fsa_t { Reference::T } else { Reference::Normal },
                    };
                    Adjustment {
                        label: format!("custom {}", fsa.to_string().trim_start_matches("FSA ")),
                        fsa,
                    }
                }
            };
            if !out.contains(&adj) {
                out.push(adj);
            }
        }
        Ok(out)
    }
}
