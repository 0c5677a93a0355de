//! Bayesian estimation of the marginal and dependence parameters by
//! blocked Metropolis-within-Gibbs, using a per-factor likelihood model
//! (the trained surrogate, or an exact oracle in tests).

mod chain;
mod likelihood;
mod mle;
mod store;
mod stvc;

pub use chain::{
    delta_bar, log_posterior, run_chain, BlockStats, ChainOutput, ChainState, Sampler,
};
pub use likelihood::{ExactGaussianFactors, FactorModel, FlatFactors};
pub use mle::{fit_gev_mle, pooled_mle, GevMle};
pub use store::{PosteriorStore, RunManifest};
pub use stvc::{inverse_gamma_update, StvcField};

use serde::{Deserialize, Serialize};

use crate::dependence::SiteSet;
use crate::error::{NpmmError, Result};
use crate::marginal::{N_COEFFS, N_COVARIATES};

/// Names of the eight per-site coefficients, in storage order.
pub const COEFF_NAMES: [&str; N_COEFFS] = ["mu0", "mu1", "mu2", "mu3", "mu4", "mu5", "sigma", "xi"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorSpec {
    pub mu_sd: f64,
    pub log_sigma_sd: f64,
    pub xi_sd: f64,
    pub beta_sd: f64,
    pub field_mean_sd: f64,
    pub ig_shape: f64,
    pub ig_rate: f64,
    pub log_range_mean: f64,
    pub log_range_sd: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            mu_sd: 10.0,
            log_sigma_sd: 10.0,
            xi_sd: 0.25,
            beta_sd: 1.0,
            field_mean_sd: 10.0,
            ig_shape: 0.1,
            ig_rate: 0.1,
            log_range_mean: -2.0,
            log_range_sd: 1.0,
        }
    }
}

impl PriorSpec {
    /// Prior sd of transformed coefficient `k` in pooled mode.
    pub fn coeff_sd(&self, k: usize) -> f64 {
        match k {
            6 => self.log_sigma_sd,
            7 => self.xi_sd,
            _ => self.mu_sd,
        }
    }
}

/// How the marginal coefficients are shared across sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MarginalMode {
    /// One coefficient vector for all sites; inactive coefficients stay at
    /// their initial value (zero for slopes).
    Pooled { active: [bool; N_COEFFS] },
    /// Per-site coefficients with spatial-process priors on every active
    /// field; inactive coefficients are held at zero.
    Stvc { active: [bool; N_COEFFS] },
}

impl MarginalMode {
    pub fn active(&self) -> [bool; N_COEFFS] {
        match self {
            MarginalMode::Pooled { active } | MarginalMode::Stvc { active } => *active,
        }
    }

    pub fn stvc_all() -> Self {
        MarginalMode::Stvc {
            active: [true; N_COEFFS],
        }
    }

    /// Intercept, first slope, scale and shape.
    pub fn simulation_study() -> Self {
        MarginalMode::Pooled {
            active: [true, true, false, false, false, false, true, true],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub target_accept: f64,
    pub adapt_exponent: f64,
    pub marginal: MarginalMode,
    pub priors: PriorSpec,
    /// Initial random-walk scale of the `(β_i0, β_i1)` blocks.
    pub beta_step: f64,
    /// Initial random-walk scale of `(logit ρ, logit r)`.
    pub dep_step: f64,
    /// Initial random-walk scale of each log field range.
    pub range_step: f64,
    /// Recompute every factor on each proposal instead of only the affected ones.
    pub global_updates: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            iterations: 11_000,
            burn_in: 1_000,
            thin: 10,
            target_accept: 0.4,
            adapt_exponent: 0.6,
            marginal: MarginalMode::stvc_all(),
            priors: PriorSpec::default(),
            beta_step: 0.3,
            dep_step: 0.3,
            range_step: 0.5,
            global_updates: false,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(NpmmError::Config("thin must be at least 1".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(NpmmError::Config(format!(
                "burn-in {} must be below the iteration count {}",
                self.burn_in, self.iterations
            )));
        }
        if (self.iterations - self.burn_in) % self.thin != 0 {
            return Err(NpmmError::Config(format!(
                "iterations − burn-in = {} is not a multiple of thin = {}",
                self.iterations - self.burn_in,
                self.thin
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(NpmmError::Config(format!(
                "target acceptance must lie in (0,1), got {}",
                self.target_accept
            )));
        }
        Ok(())
    }

    pub fn draws(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// Observations and covariates for one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitData {
    pub sites: SiteSet,
    pub years: Vec<i32>,
    /// `y[t][s]`.
    pub y: Vec<Vec<f64>>,
    /// `covs[t][s]`, standardized.
    pub covs: Vec<Vec<[f64; N_COVARIATES]>>,
    /// Region covariates of the weight link.
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
}

impl FitData {
    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, t) = (self.n_sites(), self.n_years());
        if t == 0 || n == 0 {
            return Err(NpmmError::Data("fit data needs at least one site and one year".into()));
        }
        if self.y.len() != t || self.covs.len() != t || self.z1.len() != t || self.z2.len() != t {
            return Err(NpmmError::Data(format!(
                "{t} years but {} observation rows, {} covariate rows, {}/{} region covariates",
                self.y.len(),
                self.covs.len(),
                self.z1.len(),
                self.z2.len()
            )));
        }
        for (ti, (row, crow)) in self.y.iter().zip(&self.covs).enumerate() {
            if row.len() != n || crow.len() != n {
                return Err(NpmmError::Data(format!(
                    "year {} has {} observations and {} covariate records for {n} sites",
                    self.years[ti],
                    row.len(),
                    crow.len()
                )));
            }
            if let Some(s) = row.iter().position(|v| !v.is_finite()) {
                return Err(NpmmError::Data(format!(
                    "non-finite observation at site {s}, year {}",
                    self.years[ti]
                )));
            }
        }
        Ok(())
    }
}

/// `[μ0..μ5, log σ, ξ]` from natural coefficients.
#[inline]
pub fn to_transformed(c: &[f64; N_COEFFS]) -> [f64; N_COEFFS] {
    let mut t = *c;
    t[6] = c[6].ln();
    t
}

#[inline]
pub fn from_transformed(t: &[f64; N_COEFFS]) -> [f64; N_COEFFS] {
    let mut c = *t;
    c[6] = t[6].exp();
    c
}

#[inline]
pub(crate) fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    crate::stats::norm_ln_pdf((x - mean) / sd) - sd.ln()
}

#[inline]
pub(crate) fn inverse_gamma_logpdf(x: f64, shape: f64, rate: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - libm::lgamma(shape) - (shape + 1.0) * x.ln() - rate / x
}
