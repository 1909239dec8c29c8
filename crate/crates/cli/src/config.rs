//! Run configuration read from a TOML file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sdewhittle::likelihood::Backend;
use sdewhittle::sampler::Prior;
use sdewhittle::simulate::{Dynamics, StimulusSpec};
use sdewhittle::target::Transform;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "SDEWHITTLE_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Fhn,
    Npm,
    HarmonicOscillator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ParameterizationKind {
    #[default]
    Original,
    SteadyState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    #[default]
    Mwg,
    Smmala,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Start at the configured parameter values.
    #[default]
    Truth,
    /// Perturb the configured values in sampling coordinates.
    Random,
}

/// Pseudo-data generation. Unset fields take model-specific defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SimulateSettings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver_dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub obs_dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dynamics: Option<Dynamics>,
    /// Initial state; the stable equilibrium when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stimulus: Option<StimulusSpec>,
}

/// Likelihood backend settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LikelihoodSettings {
    /// Euler substeps per observation interval (EKF, particle, ODE).
    pub substeps: usize,
    pub particles: usize,
    pub seed: u64,
    /// Subtract the sample mean before the periodogram.
    pub remove_mean: bool,
}

impl Default for LikelihoodSettings {
    fn default() -> Self {
        LikelihoodSettings {
            substeps: 10,
            particles: 1000,
            seed: 0,
            remove_mean: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSettings {
    pub kind: SamplerKind,
    pub iters: usize,
    /// Discarded iterations; half the run for MwG, a fifth for smMALA when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    /// smMALA step size.
    pub h: f64,
    /// MwG proposal s.d.s in sampling coordinates.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proposal_sds: Option<Vec<f64>>,
    pub seed: u64,
    pub init: InitKind,
    /// S.d. of the random-start perturbation in sampling coordinates.
    pub init_scale: f64,
    /// Per-coordinate transforms; log for log-normal priors, identity otherwise when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transforms: Option<Vec<Transform>>,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        SamplerSettings {
            kind: SamplerKind::Mwg,
            iters: 1000,
            burn_in: None,
            h: 0.3,
            proposal_sds: None,
            seed: 1,
            init: InitKind::Truth,
            init_scale: 0.1,
            transforms: None,
        }
    }
}

impl SamplerSettings {
    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(match self.kind {
            SamplerKind::Mwg => self.iters / 2,
            SamplerKind::Smmala => self.iters / 5,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseSettings {
    /// Series length to test; the simulated length when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSettings {
    /// Timings per backend; the median is reported.
    pub repeats: usize,
    pub backends: Vec<Backend>,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            repeats: 20,
            backends: vec![Backend::Whittle, Backend::Kalman],
        }
    }
}

/// Everything one command needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    pub model: ModelKind,
    #[serde(default)]
    pub parameterization: ParameterizationKind,
    #[serde(default = "default_backend")]
    pub backend: Backend,
    /// Data CSV; `<output_dir>/data.csv` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Overrides of the model's reference parameter values, by name.
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// Prior over the sampled parameters; a model default when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior: Option<Prior>,
    #[serde(default)]
    pub simulate: SimulateSettings,
    #[serde(default)]
    pub likelihood: LikelihoodSettings,
    #[serde(default)]
    pub sampler: SamplerSettings,
    #[serde(default)]
    pub diagnose: DiagnoseSettings,
    #[serde(default)]
    pub bench: BenchSettings,
}

fn default_backend() -> Backend {
    Backend::Whittle
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl InferenceConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config file and applies the output-directory environment override.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            cfg.output_dir = PathBuf::from(dir);
        }
        Ok(cfg)
    }

    pub fn data_path(&self) -> PathBuf {
        self.data
            .clone()
            .unwrap_or_else(|| self.output_dir.join("data.csv"))
    }
}
