//! Law of `δ E₁ + (1 − δ) E₂` for independent standard exponentials.

use crate::error::{NpmmError, Result};

pub const DELTA_CLAMP: f64 = 1e-12;

/// Half-width of the window around δ = 1/2 where the series is used.
pub const SERIES_HALF_WIDTH: f64 = 1e-4;

#[inline]
pub fn clamp_delta(delta: f64) -> f64 {
    delta.clamp(DELTA_CLAMP, 1.0 - DELTA_CLAMP)
}

/// Survival function `P(V > v)`.
#[inline]
pub fn hypoexp_sf(v: f64, delta: f64) -> f64 {
    if v <= 0.0 {
        return 1.0;
    }
    let d = clamp_delta(delta);
    let eps = d - 0.5;
    if eps.abs() <= SERIES_HALF_WIDTH {
        // Second-order expansion about the Gamma(2, 2) limit; the first-order
        // term vanishes by symmetry.
        let e2 = eps * eps;
        (-2.0 * v).exp() * ((1.0 + 2.0 * v) + (16.0 / 3.0) * e2 * v * v * (v - 1.5))
    } else {
        let a = 1.0 - d;
        ((a * (-v / a).exp() - d * (-v / d).exp()) / (1.0 - 2.0 * d)).clamp(0.0, 1.0)
    }
}

/// Hypoexponential CDF for a known non-negative argument.
#[inline]
pub fn hypoexp_cdf_unchecked(v: f64, delta: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    let d = clamp_delta(delta);
    if (d - 0.5).abs() <= SERIES_HALF_WIDTH {
        return 1.0 - hypoexp_sf(v, d);
    }
    // 1 − S written with expm1 so that small v keeps full relative precision.
    let a = 1.0 - d;
    let num = a * (-v / a).exp_m1() - d * (-v / d).exp_m1();
    (-num / (1.0 - 2.0 * d)).clamp(0.0, 1.0)
}

pub fn hypoexp_cdf(v: f64, delta: f64) -> Result<f64> {
    if v < 0.0 || v.is_nan() {
        return Err(NpmmError::InvalidArgument(format!(
            "hypoexponential argument must be non-negative, got {v}"
        )));
    }
    Ok(hypoexp_cdf_unchecked(v, delta))
}

#[inline]
pub fn hypoexp_pdf(v: f64, delta: f64) -> f64 {
    if v < 0.0 {
        return 0.0;
    }
    let d = clamp_delta(delta);
    let eps = d - 0.5;
    if eps.abs() <= SERIES_HALF_WIDTH {
        let e2 = eps * eps;
        (-2.0 * v).exp() * (4.0 * v + (16.0 / 3.0) * e2 * (2.0 * v * v * v - 6.0 * v * v + 3.0 * v))
    } else {
        let a = 1.0 - d;
        (((-v / a).exp() - (-v / d).exp()) / (1.0 - 2.0 * d)).max(0.0)
    }
}

const QUANTILE_TOL: f64 = 1e-10;

pub fn hypoexp_quantile(p: f64, delta: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(NpmmError::InvalidArgument(format!(
            "probability must lie in (0,1), got {p}"
        )));
    }
    let d = clamp_delta(delta);
    let upper = p > 0.5;
    // Residual on the well-conditioned side of the distribution.
    let resid = |v: f64| {
        if upper {
            (1.0 - p) - hypoexp_sf(v, d)
        } else {
            hypoexp_cdf_unchecked(v, d) - p
        }
    };

    let mut lo = 0.0;
    let mut hi = 1.0;
    while resid(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(NpmmError::Numerical(format!(
                "hypoexponential quantile bracket failed for p={p}, delta={d}"
            )));
        }
    }
    // Start from the exponential with the larger mean.
    let mut v = (-(1.0 - p).ln() * d.max(1.0 - d)).clamp(lo, hi);
    for _ in 0..200 {
        let r = resid(v);
        if r.abs() < 0.01 * QUANTILE_TOL {
            return Ok(v);
        }
        if r < 0.0 {
            lo = v;
        } else {
            hi = v;
        }
        let f = hypoexp_pdf(v, d);
        let newton = v - r / f;
        v = if f > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-15 * hi.max(1.0) {
            break;
        }
    }
    if resid(v).abs() > QUANTILE_TOL {
        return Err(NpmmError::Numerical(format!(
            "hypoexponential quantile did not converge for p={p}, delta={d}"
        )));
    }
    Ok(v)
}
