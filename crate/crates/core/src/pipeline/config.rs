//! Run configuration: a TOML file with `[model]`, `[surrogate]`, `[mcmc]`
//! and `[projection]` sections. Missing keys take their defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dependence::{DELTA_CLAMP, RHO_R_FACTOR, SERIES_HALF_WIDTH};
use crate::error::{NpmmError, Result};
use crate::inference::McmcConfig;
use crate::marginal::XI_EPS;
use crate::spqr::{Activation, Design, NetSpec, Optimizer, SplineBasis};
use crate::vecchia::DELTA_GAP_SCALE;

/// Problem size preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Desk,
    Paper,
}

impl Scale {
    pub fn training_rows(self) -> usize {
        match self {
            Scale::Desk => 200_000,
            Scale::Paper => 2_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Vecchia neighbour count `m`.
    pub neighbors: usize,
    pub rho_r_factor: f64,
    /// Rescale covariates and region series to [0,1] on load.
    pub standardize_covariates: bool,
    /// Used by `simulate`: scenario 1-3, or 0 for the precipitation fixture.
    pub scenario: u8,
    pub sites: usize,
    pub years: usize,
    pub r: f64,
    // Numerical constants compiled into the library; listed so a run
    // records them, and rejected if changed.
    pub xi_eps: f64,
    pub delta_clamp: f64,
    pub series_half_width: f64,
    pub root_tolerance: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            neighbors: 10,
            rho_r_factor: RHO_R_FACTOR,
            standardize_covariates: true,
            scenario: 1,
            sites: 20,
            years: 50,
            r: super::synthetic::DEFAULT_R,
            xi_eps: XI_EPS,
            delta_clamp: DELTA_CLAMP,
            series_half_width: SERIES_HALF_WIDTH,
            root_tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    /// Training rows per site; the scale preset applies when absent.
    pub rows: Option<usize>,
    pub hidden: Vec<usize>,
    pub basis_functions: usize,
    pub degree: usize,
    pub activation: Activation,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub delta_gap_scale: f64,
    /// Held-out rows per site for `diagnose`.
    pub test_rows: usize,
    pub design: Design,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        let net = NetSpec::default_for(1);
        SurrogateConfig {
            rows: None,
            hidden: net.hidden,
            basis_functions: 15,
            degree: 3,
            activation: net.activation,
            optimizer: net.optimizer,
            learning_rate: net.learning_rate,
            epochs: net.epochs,
            batch_size: net.batch_size,
            delta_gap_scale: DELTA_GAP_SCALE,
            test_rows: 2_000,
            design: Design::default(),
        }
    }
}

impl SurrogateConfig {
    pub fn rows(&self, scale: Scale) -> usize {
        self.rows.unwrap_or_else(|| scale.training_rows())
    }

    pub fn net_spec(&self, neighbors: usize) -> NetSpec {
        NetSpec {
            input_dim: neighbors + 4,
            hidden: self.hidden.clone(),
            output_dim: self.basis_functions,
            activation: self.activation,
            optimizer: self.optimizer,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
        }
    }

    pub fn basis(&self) -> Result<SplineBasis> {
        SplineBasis::new(self.basis_functions, self.degree)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionConfig {
    pub levels: Vec<f64>,
    /// Posterior draws used (the most recent ones).
    pub draws: usize,
    pub historical: (i32, i32),
    pub future: (i32, i32),
    /// Scenario label of the climate models' historical runs.
    pub historical_label: String,
    pub exceedance_levels: Vec<f64>,
    /// Simulated fields per posterior draw and year.
    pub exceedance_replicates: usize,
    /// Draws used for exceedance counts.
    pub exceedance_draws: usize,
    /// Replicates for conditional-exceedance curves in `diagnose`.
    pub chi_replicates: usize,
    pub chi_levels: Vec<f64>,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            levels: vec![0.90, 0.99],
            draws: 1000,
            historical: (1972, 2005),
            future: (2006, 2035),
            historical_label: "historical".into(),
            exceedance_levels: vec![0.90, 0.99],
            exceedance_replicates: 10,
            exceedance_draws: 100,
            chi_replicates: 1_000_000,
            chi_levels: vec![0.99, 0.999, 0.9999],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    pub surrogate: SurrogateConfig,
    pub mcmc: McmcConfig,
    pub projection: ProjectionConfig,
}

fn fixed(name: &str, got: f64, want: f64) -> Result<()> {
    if got != want {
        return Err(NpmmError::Config(format!(
            "{name} is fixed at {want} in this build, got {got}"
        )));
    }
    Ok(())
}

fn levels_ok(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() || v.iter().any(|x| !(*x > 0.0 && *x < 1.0)) {
        return Err(NpmmError::Config(format!("{name} must be non-empty and inside (0,1), got {v:?}")));
    }
    Ok(())
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Config = toml::from_str(text).map_err(|e| NpmmError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NpmmError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            NpmmError::Config(m) => NpmmError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| NpmmError::Serde(e.to_string()))
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        fixed("model.xi_eps", m.xi_eps, XI_EPS)?;
        fixed("model.delta_clamp", m.delta_clamp, DELTA_CLAMP)?;
        fixed("model.series_half_width", m.series_half_width, SERIES_HALF_WIDTH)?;
        fixed("model.root_tolerance", m.root_tolerance, 1e-9)?;
        fixed("surrogate.delta_gap_scale", self.surrogate.delta_gap_scale, DELTA_GAP_SCALE)?;
        if m.neighbors == 0 {
            return Err(NpmmError::Config("model.neighbors must be at least 1".into()));
        }
        if !(m.rho_r_factor > 0.0) {
            return Err(NpmmError::Config("model.rho_r_factor must be positive".into()));
        }
        self.surrogate.net_spec(m.neighbors).validate()?;
        self.mcmc.validate()?;
        let p = &self.projection;
        levels_ok("projection.levels", &p.levels)?;
        levels_ok("projection.exceedance_levels", &p.exceedance_levels)?;
        levels_ok("projection.chi_levels", &p.chi_levels)?;
        if p.historical.0 > p.historical.1 || p.future.0 > p.future.1 {
            return Err(NpmmError::Config("projection windows must have start ≤ end".into()));
        }
        Ok(())
    }
}
