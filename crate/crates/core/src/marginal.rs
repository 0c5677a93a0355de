//! GEV distribution mathematics and the covariate-indexed marginal model.
//!
//! The CDF is `exp{-[1 + ξ (y - μ)/σ]^(-1/ξ)}` on the set where the bracket is
//! positive, with the Gumbel limit `exp{-exp(-(y - μ)/σ)}` used when
//! `|ξ| < XI_EPS`.

use serde::{Deserialize, Serialize};

use crate::error::{NpmmError, Result};

/// Below this magnitude of the shape the Gumbel branch is used.
pub const XI_EPS: f64 = 1e-8;

/// Number of covariates entering the location parameter.
pub const N_COVARIATES: usize = 5;

/// Coefficients per site: `mu0, mu1..mu5, sigma, xi`.
pub const N_COEFFS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevParams {
    pub mu: f64,
    pub sigma: f64,
    pub xi: f64,
}

impl GevParams {
    pub fn new(mu: f64, sigma: f64, xi: f64) -> Result<Self> {
        let p = GevParams { mu, sigma, xi };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(NpmmError::InvalidParameter(format!(
                "GEV scale must be positive and finite, got {}",
                self.sigma
            )));
        }
        if !self.mu.is_finite() || !self.xi.is_finite() {
            return Err(NpmmError::InvalidParameter(format!(
                "GEV location/shape must be finite, got mu={} xi={}",
                self.mu, self.xi
            )));
        }
        Ok(())
    }

    /// `t(y)^(-1/ξ)` (or `exp(-z)` in the Gumbel limit); `None` outside the support.
    #[inline]
    fn tail_term(&self, y: f64) -> Option<f64> {
        let z = (y - self.mu) / self.sigma;
        if self.xi.abs() < XI_EPS {
            Some((-z).exp())
        } else {
            let xz = self.xi * z;
            if xz <= -1.0 {
                None
            } else {
                Some((-xz.ln_1p() / self.xi).exp())
            }
        }
    }

    /// CDF without re-validating the scale; used on hot paths.
    #[inline]
    pub fn cdf_unchecked(&self, y: f64) -> f64 {
        match self.tail_term(y) {
            Some(t) => (-t).exp(),
            None if self.xi > 0.0 => 0.0,
            None => 1.0,
        }
    }

    #[inline]
    pub fn logpdf_unchecked(&self, y: f64) -> f64 {
        let z = (y - self.mu) / self.sigma;
        if self.xi.abs() < XI_EPS {
            return -self.sigma.ln() - z - (-z).exp();
        }
        let xz = self.xi * z;
        if xz <= -1.0 {
            return f64::NEG_INFINITY;
        }
        let log_t = xz.ln_1p();
        -self.sigma.ln() - (1.0 + 1.0 / self.xi) * log_t - (-log_t / self.xi).exp()
    }

    #[inline]
    pub fn quantile_unchecked(&self, prob: f64) -> f64 {
        let neg_log_p = -prob.ln();
        if self.xi.abs() < XI_EPS {
            self.mu - self.sigma * neg_log_p.ln()
        } else {
            self.mu + self.sigma * ((-self.xi * neg_log_p.ln()).exp_m1()) / self.xi
        }
    }
}

pub fn gev_cdf(y: f64, p: &GevParams) -> Result<f64> {
    p.validate()?;
    Ok(p.cdf_unchecked(y))
}

/// Log density; `-inf` outside the support so that proposals can be rejected.
pub fn gev_logpdf(y: f64, p: &GevParams) -> Result<f64> {
    p.validate()?;
    Ok(p.logpdf_unchecked(y))
}

pub fn gev_quantile(prob: f64, p: &GevParams) -> Result<f64> {
    p.validate()?;
    if !(prob > 0.0 && prob < 1.0) {
        return Err(NpmmError::InvalidArgument(format!(
            "probability must lie in (0,1), got {prob}"
        )));
    }
    Ok(p.quantile_unchecked(prob))
}

/// Per-site coefficient vectors `[mu0, mu1..mu5, sigma, xi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalCoeffs {
    pub sites: Vec<[f64; N_COEFFS]>,
}

impl MarginalCoeffs {
    pub fn uniform(n_sites: usize, coeffs: [f64; N_COEFFS]) -> Self {
        MarginalCoeffs {
            sites: vec![coeffs; n_sites],
        }
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn sigma(&self, site: usize) -> f64 {
        self.sites[site][6]
    }

    pub fn xi(&self, site: usize) -> f64 {
        self.sites[site][7]
    }
}

/// Covariates for one `(site, year)`; all five are standardized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariateRecord {
    pub site: usize,
    pub year: i32,
    pub x: [f64; N_COVARIATES],
}

/// Linear location `mu0 + Σ mu_i x_i` for a single coefficient vector.
#[inline]
pub fn linear_location(coeffs: &[f64; N_COEFFS], x: &[f64; N_COVARIATES]) -> f64 {
    coeffs[0] + (0..N_COVARIATES).map(|i| coeffs[i + 1] * x[i]).sum::<f64>()
}

/// Location parameter of `site` in `year`.
pub fn location_at(
    site: usize,
    year: i32,
    covs: Option<&CovariateRecord>,
    coeffs: &MarginalCoeffs,
) -> Result<f64> {
    let rec = covs.ok_or_else(|| {
        NpmmError::Data(format!("missing covariates for site {site}, year {year}"))
    })?;
    if rec.site != site || rec.year != year {
        return Err(NpmmError::Data(format!(
            "covariate record is for (site {}, year {}), expected (site {site}, year {year})",
            rec.site, rec.year
        )));
    }
    if rec.x.iter().any(|v| !v.is_finite()) {
        return Err(NpmmError::Data(format!(
            "non-finite covariate for site {site}, year {year}"
        )));
    }
    let c = coeffs
        .sites
        .get(site)
        .ok_or_else(|| NpmmError::InvalidArgument(format!("no coefficients for site {site}")))?;
    Ok(linear_location(c, &rec.x))
}

/// Yearly GEV parameters of one site.
pub fn yearly_params(coeffs: &[f64; N_COEFFS], covs: &[[f64; N_COVARIATES]]) -> Vec<GevParams> {
    covs.iter()
        .map(|x| GevParams {
            mu: linear_location(coeffs, x),
            sigma: coeffs[6],
            xi: coeffs[7],
        })
        .collect()
}

const MAX_BRACKET_EXPANSIONS: usize = 200;
const PROB_TOL: f64 = 1e-9;

/// Level `y*` with `Π_t F_t(y*) = prob`: the `prob`-quantile of the maximum
/// over all years of independent yearly GEV variables.
pub fn max_quantile_solve(prob: f64, yearly: &[GevParams]) -> Result<f64> {
    if yearly.is_empty() {
        return Err(NpmmError::InvalidArgument(
            "at least one yearly distribution is required".into(),
        ));
    }
    if !(prob > 0.0 && prob < 1.0) {
        return Err(NpmmError::InvalidArgument(format!(
            "probability must lie in (0,1), got {prob}"
        )));
    }
    for p in yearly {
        p.validate()?;
    }
    let log_target = prob.ln();
    let log_prod = |y: f64| -> f64 {
        yearly
            .iter()
            .map(|p| match p.tail_term(y) {
                Some(t) => -t,
                None if p.xi > 0.0 => f64::NEG_INFINITY,
                None => 0.0,
            })
            .sum()
    };
    let prod = |y: f64| log_prod(y).exp();

    let qs: Vec<f64> = yearly.iter().map(|p| p.quantile_unchecked(prob)).collect();
    let mut lo = qs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut width = (hi - lo).max(yearly.iter().map(|p| p.sigma).fold(0.0, f64::max));

    let mut expansions = 0;
    while log_prod(lo) > log_target {
        lo -= width;
        width *= 2.0;
        expansions += 1;
        if expansions > MAX_BRACKET_EXPANSIONS || !lo.is_finite() {
            return Err(NpmmError::Numerical(format!(
                "no lower bracket for max-quantile at prob {prob}; last attempt lo={lo}"
            )));
        }
    }
    while log_prod(hi) < log_target {
        hi += width;
        width *= 2.0;
        expansions += 1;
        if expansions > MAX_BRACKET_EXPANSIONS || !hi.is_finite() {
            return Err(NpmmError::Numerical(format!(
                "no bracket for max-quantile at prob {prob}; attempted [{lo}, {hi}]"
            )));
        }
    }

    // Bisection until the probability residual is inside tolerance.
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = prod(mid) - prob;
        if f_mid.abs() < 0.1 * PROB_TOL {
            lo = mid;
            hi = mid;
            break;
        }
        if f_mid < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (prod(hi) - prod(lo)) < 0.1 * PROB_TOL {
            break;
        }
    }

    // Secant polish inside the bracket.
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (prod(a) - prob, prod(b) - prob);
    let mut best = if fa.abs() < fb.abs() { a } else { b };
    for _ in 0..20 {
        if fb == fa {
            break;
        }
        let c = b - fb * (b - a) / (fb - fa);
        if !(c >= lo && c <= hi) {
            break;
        }
        let fc = prod(c) - prob;
        if fc.abs() < (prod(best) - prob).abs() {
            best = c;
        }
        if fc == 0.0 {
            break;
        }
        a = b;
        fa = fb;
        b = c;
        fb = fc;
    }
    let residual = (prod(best) - prob).abs();
    if residual > PROB_TOL {
        return Err(NpmmError::Numerical(format!(
            "max-quantile residual {residual:e} exceeds tolerance in [{lo}, {hi}]"
        )));
    }
    Ok(best)
}
