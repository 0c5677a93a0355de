use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{NpmmError, Result};

pub const JITTER: f64 = 1e-10;
pub const MAX_JITTER_ATTEMPTS: usize = 3;

/// `r · exp(−(h/ρ)^α)`.
pub fn powered_exp_corr(h: f64, rho: f64, alpha: f64, r: f64) -> Result<f64> {
    if h < 0.0 || h.is_nan() {
        return Err(NpmmError::InvalidArgument(format!(
            "distance must be non-negative, got {h}"
        )));
    }
    if !(rho > 0.0) || !(alpha > 0.0 && alpha <= 2.0) || !(r >= 0.0 && r <= 1.0) {
        return Err(NpmmError::InvalidParameter(format!(
            "correlation parameters out of range: rho={rho}, alpha={alpha}, r={r}"
        )));
    }
    Ok(corr_unchecked(h, rho, alpha, r))
}

#[inline]
pub(crate) fn corr_unchecked(h: f64, rho: f64, alpha: f64, r: f64) -> f64 {
    if h == 0.0 {
        r
    } else {
        r * (-(h / rho).powf(alpha)).exp()
    }
}

pub(crate) fn distance(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Cholesky factor with up to `MAX_JITTER_ATTEMPTS` diagonal jitters.
pub fn cholesky_with_jitter(mut m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    for attempt in 0..=MAX_JITTER_ATTEMPTS {
        if let Some(c) = m.clone().cholesky() {
            return Ok(c.unpack());
        }
        if attempt == MAX_JITTER_ATTEMPTS {
            break;
        }
        for i in 0..m.nrows() {
            m[(i, i)] += JITTER;
        }
    }
    Err(NpmmError::Numerical(format!(
        "covariance factorization failed after {MAX_JITTER_ATTEMPTS} jitter attempts of {JITTER}; \
         consider a larger jitter or removing duplicate sites"
    )))
}

/// Correlation `r·C + (1 − r)·I` of the Gaussian field with nugget.
pub fn gp_correlation(coords: &[[f64; 2]], rho: f64, alpha: f64, r: f64) -> DMatrix<f64> {
    let n = coords.len();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            corr_unchecked(distance(&coords[i], &coords[j]), rho, alpha, r)
        }
    })
}

/// Lower Cholesky factor of a GP correlation, reusable across replicates.
#[derive(Debug, Clone)]
pub struct GpFactor {
    pub(crate) lower: DMatrix<f64>,
}

impl GpFactor {
    pub fn new(coords: &[[f64; 2]], rho: f64, alpha: f64, r: f64) -> Result<Self> {
        if !(rho > 0.0) || !(alpha > 0.0 && alpha <= 2.0) || !(r >= 0.0 && r <= 1.0) {
            return Err(NpmmError::InvalidParameter(format!(
                "GP parameters out of range: rho={rho}, alpha={alpha}, r={r}"
            )));
        }
        let lower = cholesky_with_jitter(gp_correlation(coords, rho, alpha, r))?;
        Ok(GpFactor { lower })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.lower.nrows();
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        (&self.lower * z).iter().copied().collect()
    }
}

/// One draw of the unit-variance Gaussian field at `coords`.
pub fn gp_sample<R: Rng + ?Sized>(
    coords: &[[f64; 2]],
    rho: f64,
    alpha: f64,
    r: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(GpFactor::new(coords, rho, alpha, r)?.sample(rng))
}
