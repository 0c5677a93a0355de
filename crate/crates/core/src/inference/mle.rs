//! Independence-likelihood GEV fits used to start chains and size proposals.

use nalgebra::DMatrix;

use super::{from_transformed, normal_logpdf, FitData, PriorSpec};
use crate::error::{NpmmError, Result};
use crate::marginal::{linear_location, GevParams, N_COEFFS, N_COVARIATES};
use crate::optim::{hessian_fd, nelder_mead};

#[derive(Debug, Clone)]
pub struct GevMle {
    /// Natural-scale coefficients `[μ0..μ5, σ, ξ]`.
    pub coeffs: [f64; N_COEFFS],
    pub loglik: f64,
    pub active: [bool; N_COEFFS],
    /// Inverse curvature of the penalised negative log likelihood over the
    /// active transformed coordinates; sizes Metropolis proposals.
    pub proposal_cov: DMatrix<f64>,
    /// Likelihood-only standard errors of the active transformed
    /// coordinates, `None` if the observed information is singular.
    pub std_errors: Option<Vec<f64>>,
    pub converged: bool,
}

fn gev_loglik(coeffs: &[f64; N_COEFFS], y: &[f64], covs: &[[f64; N_COVARIATES]]) -> f64 {
    let mut total = 0.0;
    for (yi, x) in y.iter().zip(covs) {
        let p = GevParams {
            mu: linear_location(coeffs, x),
            sigma: coeffs[6],
            xi: coeffs[7],
        };
        total += p.logpdf_unchecked(*yi);
    }
    total
}

fn expand(active: &[bool; N_COEFFS], base: &[f64; N_COEFFS], x: &[f64]) -> [f64; N_COEFFS] {
    let mut t = *base;
    let mut k = 0;
    for j in 0..N_COEFFS {
        if active[j] {
            t[j] = x[k];
            k += 1;
        }
    }
    t
}

/// Maximum-likelihood GEV fit with a linear location in the covariates.
/// Inactive coefficients are held at zero.
pub fn fit_gev_mle(
    y: &[f64],
    covs: &[[f64; N_COVARIATES]],
    active: [bool; N_COEFFS],
    priors: &PriorSpec,
) -> Result<GevMle> {
    if y.len() != covs.len() || y.len() < 3 {
        return Err(NpmmError::Data(format!(
            "GEV fit needs at least 3 observations with covariates, got {} and {}",
            y.len(),
            covs.len()
        )));
    }
    if !active[0] || !active[6] {
        return Err(NpmmError::InvalidArgument(
            "the intercept and scale must be estimated".into(),
        ));
    }
    let sd = crate::stats::std_dev(y).max(1e-6);
    let sigma0 = 6f64.sqrt() * sd / std::f64::consts::PI;
    let mut base = [0.0; N_COEFFS];
    base[0] = crate::stats::mean(y) - 0.577_215_664_9 * sigma0;
    base[6] = sigma0.ln();
    base[7] = if active[7] { 0.1 } else { 0.0 };
    let x0: Vec<f64> = (0..N_COEFFS).filter(|&j| active[j]).map(|j| base[j]).collect();
    let step: Vec<f64> = (0..N_COEFFS)
        .filter(|&j| active[j])
        .map(|j| match j {
            6 => 0.2,
            7 => 0.05,
            _ => 0.5 * sigma0,
        })
        .collect();
    let nll = |x: &[f64]| -gev_loglik(&from_transformed(&expand(&active, &base, x)), y, covs);
    let mut res = nelder_mead(nll, &x0, &step, 1e-12, 20_000);
    // one restart shakes out premature simplex collapse
    let restart: Vec<f64> = step.iter().map(|s| 0.2 * s).collect();
    res = nelder_mead(nll, &res.x.clone(), &restart, 1e-13, 20_000);
    if !res.value.is_finite() {
        return Err(NpmmError::Initialization(
            "GEV likelihood is not finite at any explored point".into(),
        ));
    }
    let h: Vec<f64> = res.x.iter().map(|v| 1e-4 * (1.0 + v.abs())).collect();
    let info = hessian_fd(nll, &res.x, &h);
    let std_errors = info
        .clone()
        .cholesky()
        .map(|c| c.inverse().diagonal().iter().map(|v| v.sqrt()).collect());
    let idx: Vec<usize> = (0..N_COEFFS).filter(|&j| active[j]).collect();
    let mut pen = info.clone();
    for (a, &j) in idx.iter().enumerate() {
        pen[(a, a)] += 1.0 / priors.coeff_sd(j).powi(2);
    }
    let proposal_cov = match pen.clone().cholesky() {
        Some(c) => c.inverse(),
        None => DMatrix::from_fn(idx.len(), idx.len(), |a, b| {
            if a == b {
                1.0 / pen[(a, a)].abs().max(1e-6)
            } else {
                0.0
            }
        }),
    };
    Ok(GevMle {
        coeffs: from_transformed(&expand(&active, &base, &res.x)),
        loglik: -res.value,
        active,
        proposal_cov,
        std_errors,
        converged: res.converged,
    })
}

/// One GEV fit pooling every site and year.
pub fn pooled_mle(data: &FitData, active: [bool; N_COEFFS], priors: &PriorSpec) -> Result<GevMle> {
    let mut y = Vec::with_capacity(data.n_sites() * data.n_years());
    let mut x = Vec::with_capacity(y.capacity());
    for (row, crow) in data.y.iter().zip(&data.covs) {
        y.extend_from_slice(row);
        x.extend_from_slice(crow);
    }
    fit_gev_mle(&y, &x, active, priors)
}

/// Log prior density of a pooled transformed coefficient vector.
pub(crate) fn pooled_logprior(t: &[f64; N_COEFFS], active: &[bool; N_COEFFS], priors: &PriorSpec) -> f64 {
    (0..N_COEFFS)
        .filter(|&j| active[j])
        .map(|j| normal_logpdf(t[j], 0.0, priors.coeff_sd(j)))
        .sum()
}
