//! Run configuration: a TOML document with `model`, `smcmc`, `data`,
//! `output`, `sweep`, `probe` and optional `smoke` tables.

use std::path::Path;

use serde::{Deserialize, Serialize};
use smcmc::engine::{AdaptationConfig, SmcmcConfig};
use smcmc::kernel::KernelConfig;
use smcmc::linear_noise::DEFAULT_DELTA_GRID;
use smcmc::models::{FhnModel, FhnParams, KsConfig, KsModel, LinearGaussianModel, MaternConfig};

use crate::error::{CliError, Result};

/// Named configurations shipped with the binary.
pub const PRESETS: [(&str, &str); 4] = [
    ("lgm_sec41", include_str!("../presets/lgm_sec41.toml")),
    ("sphere_sec42", include_str!("../presets/sphere_sec42.toml")),
    ("fhn_sec43", include_str!("../presets/fhn_sec43.toml")),
    ("ks_sec44", include_str!("../presets/ks_sec44.toml")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub smcmc: SmcmcSection,
    pub data: DataSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoke: Option<SmokeSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Lgm {
        dim_x: usize,
        sigma: f64,
    },
    Sphere {
        dim_x: usize,
        sigma: f64,
    },
    Fhn {
        sigma: f64,
        epsilon: f64,
        gamma: f64,
        beta: f64,
        delta: f64,
    },
    Ks {
        dim_x: usize,
        obs_stride: usize,
        domain: f64,
        damping: f64,
        matern_smoothness: f64,
        matern_range: f64,
        matern_variance: f64,
        precond_obs_std: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmcmcSection {
    pub n_particles: usize,
    pub subset_size: usize,
    /// Defaults to `n_particles / 10`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    /// Proposal scale, or the starting point of the pilot when `auto_tune`.
    pub rho: f64,
    #[serde(default)]
    pub auto_tune: bool,
    #[serde(default = "default_target_acceptance")]
    pub target_acceptance: f64,
    #[serde(default = "default_pilot_steps")]
    pub pilot_steps: usize,
    #[serde(default = "default_one")]
    pub index_moves_per_sweep: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub n_observations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Write one CSV of particles per observation time.
    pub write_samples: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { write_samples: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub s_values: Vec<usize>,
    pub replicates: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            s_values: vec![1, 10, 20, 30, 40, 50],
            replicates: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    /// Size of the previous particle cloud.
    pub n_particles: usize,
    pub delta_grid: Vec<f64>,
    /// Probe the null move `z̃' = z̃`.
    pub identical_proposal: bool,
    /// Pilot length for tuning the degenerate kernel's proposal scale.
    pub pilot_steps: usize,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self {
            n_particles: 10,
            delta_grid: DEFAULT_DELTA_GRID.to_vec(),
            identical_proposal: false,
            pilot_steps: 2000,
        }
    }
}

/// Overrides applied by `--smoke`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmokeSection {
    pub n_observations: usize,
    pub n_particles: usize,
    pub subset_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
}

fn default_target_acceptance() -> f64 {
    0.234
}

fn default_pilot_steps() -> usize {
    1000
}

fn default_one() -> usize {
    1
}

/// Where a configuration came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigSource {
    Preset(String),
    File(String),
}

impl ConfigSource {
    pub fn describe(&self) -> String {
        match self {
            ConfigSource::Preset(name) => format!("preset:{name}"),
            ConfigSource::File(path) => path.clone(),
        }
    }
}

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

/// Load `spec` as a file path if it exists, else as a preset name.
pub fn load(spec: &str) -> Result<(RunConfig, ConfigSource)> {
    let path = Path::new(spec);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        return Ok((RunConfig::from_toml(&text)?, ConfigSource::File(spec.to_string())));
    }
    let name = spec.strip_prefix("preset:").unwrap_or(spec);
    match preset(name) {
        Some(text) => Ok((RunConfig::from_toml(text)?, ConfigSource::Preset(name.to_string()))),
        None => Err(CliError::Config(format!(
            "{spec} is neither a config file nor a preset (known: {})",
            PRESETS.map(|(n, _)| n).join(", ")
        ))),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// The configuration with its `smoke` overrides applied.
    pub fn smoke_variant(&self) -> Result<Self> {
        let smoke = self
            .smoke
            .as_ref()
            .ok_or_else(|| CliError::Config("config has no [smoke] table".into()))?;
        let mut out = self.clone();
        out.smoke = None;
        out.data.n_observations = smoke.n_observations;
        out.smcmc.n_particles = smoke.n_particles;
        out.smcmc.subset_size = smoke.subset_size;
        out.smcmc.burn_in = None;
        if let Some(r) = smoke.replicates {
            out.sweep.replicates = r;
        }
        if let Some(m) = &smoke.model {
            out.model = m.clone();
        }
        Ok(out)
    }

    /// Reject configurations before any computation starts.
    pub fn validate(&self) -> Result<()> {
        self.smcmc_config()?.validate()?;
        if self.data.n_observations == 0 {
            return Err(CliError::Config("n_observations must be positive".into()));
        }
        if self.sweep.s_values.is_empty() || self.sweep.replicates == 0 {
            return Err(CliError::Config("sweep needs at least one s value and one replicate".into()));
        }
        if let Some(s) = self.sweep.s_values.iter().find(|s| **s == 0 || **s > self.smcmc.n_particles) {
            return Err(CliError::Config(format!(
                "sweep value s={s} must lie in 1..=N={}",
                self.smcmc.n_particles
            )));
        }
        if self.probe.n_particles == 0 {
            return Err(CliError::Config("probe needs at least one particle".into()));
        }
        self.model.build()?;
        Ok(())
    }

    pub fn smcmc_config(&self) -> Result<SmcmcConfig> {
        let s = &self.smcmc;
        let kernel = KernelConfig {
            target_acceptance: s.target_acceptance,
            ..KernelConfig::new(s.rho)
        };
        let cfg = SmcmcConfig {
            burn_in: s.burn_in,
            kernel,
            index_moves_per_sweep: s.index_moves_per_sweep,
            adaptation: s.auto_tune.then_some(AdaptationConfig {
                pilot_steps: s.pilot_steps,
            }),
            ..SmcmcConfig::new(s.n_particles, s.subset_size, s.rho)
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A constructed reference model.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Linear(LinearGaussianModel),
    Fhn(FhnModel),
    Ks(KsModel),
}

impl ModelConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::Lgm { .. } => "lgm",
            ModelConfig::Sphere { .. } => "sphere",
            ModelConfig::Fhn { .. } => "fhn",
            ModelConfig::Ks { .. } => "ks",
        }
    }

    pub fn build(&self) -> Result<AnyModel> {
        Ok(match *self {
            ModelConfig::Lgm { dim_x, sigma } => AnyModel::Linear(LinearGaussianModel::lgm_spec(dim_x, sigma)?),
            ModelConfig::Sphere { dim_x, sigma } => AnyModel::Linear(LinearGaussianModel::sphere_spec(dim_x, sigma)?),
            ModelConfig::Fhn {
                sigma,
                epsilon,
                gamma,
                beta,
                delta,
            } => AnyModel::Fhn(FhnModel::new(FhnParams {
                sigma,
                epsilon,
                gamma,
                beta,
                delta,
            })?),
            ModelConfig::Ks {
                dim_x,
                obs_stride,
                domain,
                damping,
                matern_smoothness,
                matern_range,
                matern_variance,
                precond_obs_std,
            } => AnyModel::Ks(KsModel::new(KsConfig {
                dim_x,
                obs_stride,
                domain,
                damping,
                matern: MaternConfig {
                    smoothness: matern_smoothness,
                    range: matern_range,
                    variance: matern_variance,
                },
                precond_obs_std,
            })?),
        })
    }
}
