use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use wavemoments::lab::ContaminationSpec;
use wavemoments::{Error, OmegaKind, PsiKind, PsiSpec, WaveletFamily};

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "wavemoments", version, about = "Robust wavelet variance and wavelet-moment model fitting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Standard and robust wavelet variance with confidence intervals.
    Wv(Flags),
    /// Fit one or more latent models to a series.
    Fit(Flags),
    /// Flag observations down-weighted by the robust estimator.
    Outliers(Flags),
    /// Run simulation scenarios from a TOML file.
    Simulate(Flags),
}

impl Command {
    pub fn flags(&self) -> &Flags {
        match self {
            Command::Wv(f) | Command::Fit(f) | Command::Outliers(f) | Command::Simulate(f) => f,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Wv(_) => "wv",
            Command::Fit(_) => "fit",
            Command::Outliers(_) => "outliers",
            Command::Simulate(_) => "simulate",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Flags {
    /// Input CSV with one numeric column.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Model such as "AR1 + WN"; repeat to compare several models.
    #[arg(long)]
    pub model: Vec<String>,
    /// huber, tukey or none.
    #[arg(long)]
    pub psi: Option<String>,
    /// Target asymptotic efficiency of the robust estimator.
    #[arg(long)]
    pub efficiency: Option<f64>,
    /// Explicit tuning constant (instead of --efficiency).
    #[arg(long = "c")]
    pub tuning: Option<f64>,
    /// diag, full or identity.
    #[arg(long)]
    pub omega: Option<String>,
    /// batched, block-bootstrap or parametric.
    #[arg(long)]
    pub cov: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Wavelet family: haar, d4, d6 or d8.
    #[arg(long)]
    pub family: Option<String>,
    /// Number of wavelet levels.
    #[arg(long)]
    pub levels: Option<usize>,
    /// Bootstrap resamples, or simulation replicates for `simulate`.
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub block_len: Option<usize>,
    /// Optimizer starting points.
    #[arg(long)]
    pub starts: Option<usize>,
    /// Weight below which an observation is flagged.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Highest level inspected for outliers.
    #[arg(long)]
    pub max_level: Option<usize>,
    /// Scenario file for `simulate`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Re-run the configuration embedded in a previous output JSON.
    #[arg(long)]
    pub run_config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsiConfig {
    pub kind: String,
    #[serde(default)]
    pub efficiency: Option<f64>,
    #[serde(default)]
    pub c: Option<f64>,
}

impl PsiConfig {
    pub fn resolve(&self) -> CliResult<PsiSpec> {
        let kind: PsiKind = self.kind.parse()?;
        if kind == PsiKind::Identity {
            if self.efficiency.is_some() || self.c.is_some() {
                return Err(CliError::Usage("psi 'none' takes no tuning constant or efficiency".into()));
            }
            return Ok(PsiSpec::identity());
        }
        match (self.efficiency, self.c) {
            (Some(_), Some(_)) => Err(CliError::Usage("give either --efficiency or --c, not both".into())),
            (Some(e), None) => Ok(PsiSpec::from_efficiency(kind, e)?),
            (None, Some(c)) => Ok(PsiSpec::new(kind, c)?),
            (None, None) => Ok(PsiSpec::from_efficiency(kind, 0.6)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub id: String,
    pub model: String,
    #[serde(default)]
    pub length: Option<usize>,
    #[serde(default)]
    pub replicates: Option<usize>,
    #[serde(default)]
    pub contamination: Option<ContaminationSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    pub replicates: usize,
    pub length: usize,
    pub estimators: Vec<String>,
    #[serde(default)]
    pub starts: Option<usize>,
    #[serde(default)]
    pub psi: Option<PsiConfig>,
    pub scenario: Vec<ScenarioConfig>,
}

/// Fully resolved settings of one run; embedded in every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub input: Option<String>,
    pub models: Vec<String>,
    pub psi: PsiConfig,
    pub family: String,
    pub levels: Option<usize>,
    pub omega: String,
    pub cov: String,
    pub replicates: usize,
    pub block_len: Option<usize>,
    pub starts: usize,
    pub alpha: f64,
    pub seed: u64,
    pub threshold: f64,
    pub max_level: usize,
    pub simulation: Option<SimulationConfig>,
}

pub const COV_KINDS: [&str; 3] = ["batched", "block-bootstrap", "parametric"];

impl RunConfig {
    pub fn from_flags(command: &str, f: &Flags) -> CliResult<Self> {
        let psi = PsiConfig {
            kind: f.psi.clone().unwrap_or_else(|| "tukey".into()).to_ascii_lowercase(),
            efficiency: f.efficiency,
            c: f.tuning,
        };
        let simulation = if command == "simulate" {
            let path = f
                .config
                .as_ref()
                .ok_or_else(|| CliError::Usage("simulate needs --config <scenario.toml>".into()))?;
            let mut sim = read_simulation_config(path)?;
            if let Some(r) = f.replicates {
                sim.replicates = r;
                for sc in &mut sim.scenario {
                    sc.replicates = None;
                }
            }
            if let Some(s) = f.seed {
                sim.seed = Some(s);
            }
            sim.seed = Some(sim.seed.unwrap_or(0));
            Some(sim)
        } else {
            None
        };
        let cfg = RunConfig {
            command: command.into(),
            input: f.input.as_ref().map(|p| p.display().to_string()),
            models: f.model.clone(),
            psi,
            family: f.family.clone().unwrap_or_else(|| "haar".into()).to_ascii_lowercase(),
            levels: f.levels,
            omega: f.omega.clone().unwrap_or_else(|| "diag".into()).to_ascii_lowercase(),
            cov: f.cov.clone().unwrap_or_else(|| "batched".into()).to_ascii_lowercase(),
            replicates: f.replicates.unwrap_or(100),
            block_len: f.block_len,
            starts: f.starts.unwrap_or(5),
            alpha: f.alpha.unwrap_or(0.05),
            seed: f.seed.or(simulation.as_ref().and_then(|s| s.seed)).unwrap_or(0),
            threshold: f.threshold.unwrap_or(0.1),
            max_level: f.max_level.unwrap_or(2),
            simulation,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads the `config` object of a previous output (or a bare config).
    pub fn from_output(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: invalid JSON: {e}", path.display())))?;
        let inner = value.get("config").cloned().unwrap_or(value);
        let cfg: RunConfig = serde_json::from_value(inner)
            .map_err(|e| CliError::Usage(format!("{}: invalid run configuration: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.psi.resolve()?;
        self.family()?;
        self.omega_kind()?;
        if !COV_KINDS.contains(&self.cov.as_str()) {
            return Err(CliError::Usage(format!(
                "unknown covariance method '{}' (expected batched, block-bootstrap or parametric)",
                self.cov
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Domain(format!("alpha must lie in (0, 1), got {}", self.alpha)).into());
        }
        if self.replicates < 2 && self.command != "simulate" {
            return Err(CliError::Usage("bootstrap covariance needs at least 2 replicates".into()));
        }
        if self.starts == 0 {
            return Err(CliError::Usage("--starts must be at least 1".into()));
        }
        if self.command != "simulate" && self.input.is_none() {
            return Err(CliError::Usage(format!("{} needs --input", self.command)));
        }
        if self.command == "fit" && self.models.is_empty() {
            return Err(CliError::Usage("fit needs --model".into()));
        }
        Ok(())
    }

    pub fn family(&self) -> CliResult<WaveletFamily> {
        Ok(self.family.parse()?)
    }

    pub fn omega_kind(&self) -> CliResult<OmegaKind> {
        Ok(self.omega.parse()?)
    }
}

pub fn read_simulation_config(path: &Path) -> CliResult<SimulationConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e.message())))
}
