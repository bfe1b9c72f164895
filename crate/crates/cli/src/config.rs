//! Experiment configuration: a versioned TOML file with `system`,
//! `resolution`, `run`, `output` and `verify` blocks. Unknown keys are
//! rejected and every parameter is checked before any computation starts.

use std::path::{Path, PathBuf};

use fastslow::systems::{ExampleFamily, FastSlowSystem, SkewProduct};
use fastslow::transfer::GkTerms;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CONFIG_VERSION: u32 = 1;

/// Shipped default, identical to `configs/default.toml`.
pub const DEFAULT_CONFIG: &str = include_str!("../../../configs/default.toml");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported config version {0}, expected {CONFIG_VERSION}")]
    Version(u32),
    #[error("invalid value for {key}: {reason}")]
    Invalid { key: &'static str, reason: String },
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub system: SystemConfig,
    #[serde(default)]
    pub resolution: ResolutionConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

/// Named system plus its parameters. Custom maps are registered in code only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemConfig {
    ExampleFamily {
        ell: u32,
        alpha: f64,
        beta: f64,
        epsilon: f64,
        #[serde(default)]
        omega_shift: f64,
        /// Skip the strict expansion check (fiber monotonicity is still
        /// checked wherever a transfer operator is built).
        #[serde(default)]
        covering: bool,
    },
    SkewProduct {
        ell: u32,
        cos_x: f64,
        sin_theta: f64,
        #[serde(default)]
        offset: f64,
        epsilon: f64,
    },
}

/// A system built from its config block.
#[derive(Debug, Clone)]
pub enum System {
    Example(ExampleFamily),
    Skew(SkewProduct),
}

impl System {
    pub fn as_dyn(&self) -> &dyn FastSlowSystem {
        match self {
            System::Example(s) => s,
            System::Skew(s) => s,
        }
    }

    pub fn with_epsilon(&self, eps: f64) -> fastslow::Result<System> {
        Ok(match self {
            System::Example(s) => System::Example(s.with_epsilon(eps)),
            System::Skew(s) => System::Skew(SkewProduct::new(s.ell, s.cos_x, s.sin_theta, s.offset, eps)?),
        })
    }
}

impl SystemConfig {
    pub fn epsilon(&self) -> f64 {
        match self {
            SystemConfig::ExampleFamily { epsilon, .. } | SystemConfig::SkewProduct { epsilon, .. } => *epsilon,
        }
    }

    pub fn build(&self) -> fastslow::Result<System> {
        match *self {
            SystemConfig::ExampleFamily {
                ell,
                alpha,
                beta,
                epsilon,
                omega_shift,
                covering,
            } => {
                let s = if covering {
                    ExampleFamily::covering(ell, alpha, beta, epsilon)?
                } else {
                    ExampleFamily::new(ell, alpha, beta, epsilon)?
                };
                Ok(System::Example(s.with_omega_shift(omega_shift)))
            }
            SystemConfig::SkewProduct {
                ell,
                cos_x,
                sin_theta,
                offset,
                epsilon,
            } => Ok(System::Skew(SkewProduct::new(ell, cos_x, sin_theta, offset, epsilon)?)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GkSetting {
    Fixed(usize),
    Named(GkAuto),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GkAuto {
    Auto,
}

impl GkSetting {
    pub fn terms(self) -> GkTerms {
        match self {
            GkSetting::Fixed(k) => GkTerms::Fixed(k),
            GkSetting::Named(GkAuto::Auto) => GkTerms::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResolutionConfig {
    /// Ulam bins per fiber.
    pub n_bins: usize,
    /// Slow-grid size of the fields.
    pub m: usize,
    pub gk_terms: GkSetting,
    pub center_nx: usize,
    pub center_ntheta: usize,
    pub center_tol: f64,
    /// Grid of the stationary density.
    pub stationary_m: usize,
    pub ode_step: f64,
    pub leaf_steps: usize,
    pub conjugacy_grid: usize,
    pub conjugacy_depth: usize,
    pub conjugacy_tol: f64,
}

impl Default for ResolutionConfig {
    fn default() -> Self {
        Self {
            n_bins: 4096,
            m: 256,
            gk_terms: GkSetting::Named(GkAuto::Auto),
            center_nx: 512,
            center_ntheta: 128,
            center_tol: 1e-10,
            stationary_m: 4096,
            ode_step: 1e-3,
            leaf_steps: 1000,
            conjugacy_grid: 256,
            conjugacy_depth: 40,
            conjugacy_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub n_samples: usize,
    pub theta0: f64,
    /// Slow times at which ensembles are recorded; the last one is the
    /// horizon for `compare` and `ratefn`.
    pub times: Vec<f64>,
    pub epsilon_ladder: Vec<f64>,
    pub sde_step_fraction: f64,
    pub bin_scale: f64,
    pub orbit_steps: usize,
    pub n_orbits: usize,
    pub y_max: f64,
    pub n_y: usize,
    pub n_leaves: usize,
    /// Fibers of the multiplier table.
    pub multiplier_thetas: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 20_240_601,
            n_samples: 100_000,
            theta0: 0.25,
            times: vec![1.0],
            epsilon_ladder: vec![1e-2, 2.5e-3, 6.25e-4],
            sde_step_fraction: 0.1,
            bin_scale: 0.125,
            orbit_steps: 10_000_000,
            n_orbits: 1,
            y_max: 0.1,
            n_y: 21,
            n_leaves: 50,
            multiplier_thetas: vec![0.0, 0.25],
        }
    }
}

impl RunConfig {
    pub fn horizon(&self) -> f64 {
        self.times.last().copied().unwrap_or(1.0)
    }

    pub fn y_grid(&self) -> Vec<f64> {
        if self.n_y < 2 {
            return vec![0.0];
        }
        (0..self.n_y)
            .map(|k| -self.y_max + 2.0 * self.y_max * k as f64 / (self.n_y - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Fields CSV from a previous `fields` run; recomputed when absent.
    pub fields_csv: Option<PathBuf>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            fields_csv: None,
        }
    }
}

/// Sample sizes and run lengths of the acceptance checks. The system under
/// test in each check is fixed by the check itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub lclt_samples: usize,
    pub lclt_epsilon: f64,
    pub lclt_theta0: f64,
    pub metastable_samples: usize,
    pub metastable_theta0: f64,
    pub compare_samples: usize,
    pub compare_theta0: f64,
    /// SDE step of the comparison as a fraction of `eps`.
    pub compare_step_fraction: f64,
    pub orbit_steps: usize,
    pub ratefn_theta0: f64,
    /// Sample size of the in-process reproducibility run.
    pub repro_samples: usize,
    pub repro_workers: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            lclt_samples: 100_000,
            lclt_epsilon: 1e-4,
            lclt_theta0: 0.25,
            metastable_samples: 100_000,
            metastable_theta0: 0.1,
            compare_samples: 1_000_000,
            compare_theta0: 0.25,
            compare_step_fraction: 1.0,
            orbit_steps: 10_000_000,
            ratefn_theta0: 0.0,
            repro_samples: 2000,
            repro_workers: 2,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn default_config() -> Self {
        Self::from_toml(DEFAULT_CONFIG).expect("shipped default config is valid")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(ConfigError::Version(self.version));
        }
        self.system.build().map_err(|e| invalid("system", e.to_string()))?;

        let r = &self.resolution;
        if r.n_bins < 16 {
            return Err(invalid("resolution.n_bins", "need at least 16 bins"));
        }
        if r.m < 64 {
            return Err(invalid("resolution.m", "need at least 64 slow nodes"));
        }
        if r.stationary_m < 16 {
            return Err(invalid("resolution.stationary_m", "need at least 16 nodes"));
        }
        if r.center_nx < 8 || r.center_ntheta < 4 {
            return Err(invalid("resolution.center_nx", "center grid needs n_x >= 8 and n_theta >= 4"));
        }
        for (key, v) in [
            ("resolution.center_tol", r.center_tol),
            ("resolution.ode_step", r.ode_step),
            ("resolution.conjugacy_tol", r.conjugacy_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(key, format!("{v} must be positive")));
            }
        }
        if r.leaf_steps == 0 || r.conjugacy_depth == 0 || r.conjugacy_grid < 2 {
            return Err(invalid("resolution.leaf_steps", "leaf steps, depth and grid must be positive"));
        }
        if let GkSetting::Fixed(0) = r.gk_terms {
            return Err(invalid("resolution.gk_terms", "need at least one term"));
        }

        let run = &self.run;
        if run.n_samples == 0 {
            return Err(invalid("run.n_samples", "must be positive"));
        }
        if !(0.0..1.0).contains(&run.theta0) {
            return Err(invalid("run.theta0", "must lie in [0, 1)"));
        }
        if run.times.is_empty() || run.times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(invalid("run.times", "need at least one finite non-negative time"));
        }
        if run.times.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("run.times", "times must be sorted"));
        }
        if run.epsilon_ladder.is_empty() || run.epsilon_ladder.iter().any(|e| !(*e > 0.0 && *e <= 0.1)) {
            return Err(invalid("run.epsilon_ladder", "entries must lie in (0, 0.1]"));
        }
        if !(run.sde_step_fraction > 0.0 && run.sde_step_fraction <= 1.0) {
            return Err(invalid("run.sde_step_fraction", "must lie in (0, 1]"));
        }
        if !(run.bin_scale > 0.0 && run.bin_scale.is_finite()) {
            return Err(invalid("run.bin_scale", "must be positive"));
        }
        if run.n_orbits == 0 {
            return Err(invalid("run.n_orbits", "must be positive"));
        }
        if !(run.y_max >= 0.0 && run.y_max.is_finite()) {
            return Err(invalid("run.y_max", "must be finite and non-negative"));
        }
        if run.n_leaves == 0 {
            return Err(invalid("run.n_leaves", "must be positive"));
        }
        if run.multiplier_thetas.is_empty() {
            return Err(invalid("run.multiplier_thetas", "need at least one fiber"));
        }

        let v = &self.verify;
        if v.lclt_samples == 0 || v.metastable_samples == 0 || v.compare_samples == 0 || v.repro_samples == 0 {
            return Err(invalid("verify", "sample sizes must be positive"));
        }
        if !(v.lclt_epsilon > 0.0 && v.lclt_epsilon <= 0.1) {
            return Err(invalid("verify.lclt_epsilon", "must lie in (0, 0.1]"));
        }
        if !(v.compare_step_fraction > 0.0 && v.compare_step_fraction <= 1.0) {
            return Err(invalid("verify.compare_step_fraction", "must lie in (0, 1]"));
        }
        if v.repro_workers == 0 {
            return Err(invalid("verify.repro_workers", "must be positive"));
        }
        Ok(())
    }
}
