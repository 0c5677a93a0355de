//! Exact Brown–Resnick simulation by extremal functions.
//!
//! For the site `x_j` the spectral process is
//! `Y(x) = exp(W(x) − W(x_j) − γ(x − x_j)/2)` where the increments
//! `D(x) = W(x) − W(x_j)` are Gaussian with
//! `Cov(D(x), D(y)) = (γ(x − x_j) + γ(y − x_j) − γ(x − y))/2`.
//! Sites are visited in turn and a Poisson sequence of `ζ Y` is added until
//! no further function can exceed the current maximum at `x_j`; functions
//! that would exceed an earlier site are rejected since they were already
//! accounted for there.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use super::gp::{cholesky_with_jitter, distance};
use crate::error::Result;

/// Precomputed increment factors for a fixed site configuration.
///
/// The variogram `(h/ρ)^α` scales as `ρ^{−α}`, so factors are computed once
/// at `ρ = 1` and rescaled per draw.
#[derive(Debug, Clone)]
pub struct BrownResnickSampler {
    alpha: f64,
    /// Unit-range variogram between all pairs.
    gamma1: DMatrix<f64>,
    /// For each anchor `j`, the lower factor over the other sites.
    factors: Vec<DMatrix<f64>>,
}

impl BrownResnickSampler {
    pub fn new(coords: &[[f64; 2]], alpha: f64) -> Result<Self> {
        let n = coords.len();
        let gamma1 = DMatrix::from_fn(n, n, |i, k| distance(&coords[i], &coords[k]).powf(alpha));
        let mut factors = Vec::with_capacity(n);
        for j in 0..n {
            let others: Vec<usize> = (0..n).filter(|&k| k != j).collect();
            let m = others.len();
            let cov = DMatrix::from_fn(m, m, |a, b| {
                let (x, y) = (others[a], others[b]);
                0.5 * (gamma1[(x, j)] + gamma1[(y, j)] - gamma1[(x, y)])
            });
            factors.push(if m == 0 { cov } else { cholesky_with_jitter(cov)? });
        }
        Ok(BrownResnickSampler {
            alpha,
            gamma1,
            factors,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.gamma1.nrows()
    }

    /// Log spectral function anchored at `j`, written into `out`.
    fn log_spectral<R: Rng + ?Sized>(
        &self,
        j: usize,
        scale: f64,
        z: &mut [f64],
        out: &mut [f64],
        rng: &mut R,
    ) {
        let n = self.n_sites();
        let l = &self.factors[j];
        let m = n - 1;
        for v in z.iter_mut().take(m) {
            *v = rng.sample(StandardNormal);
        }
        let sd = scale.sqrt();
        let mut a = 0;
        for (k, o) in out.iter_mut().enumerate().take(n) {
            if k == j {
                *o = 0.0;
                continue;
            }
            let mut d = 0.0;
            for b in 0..=a {
                d += l[(a, b)] * z[b];
            }
            *o = sd * d - 0.5 * scale * self.gamma1[(k, j)];
            a += 1;
        }
    }

    /// One field with unit-Fréchet margins at range `rho`.
    pub fn sample<R: Rng + ?Sized>(&self, rho: f64, rng: &mut R) -> Vec<f64> {
        let n = self.n_sites();
        let scale = rho.powf(-self.alpha);
        let mut zmax = vec![0.0f64; n];
        let mut z = vec![0.0; n.saturating_sub(1)];
        let mut logy = vec![0.0; n];
        for j in 0..n {
            let mut e: f64 = rng.sample(Exp1);
            let mut zeta = 1.0 / e;
            while zeta > zmax[j] {
                self.log_spectral(j, scale, &mut z, &mut logy, rng);
                let log_zeta = zeta.ln();
                let valid = (0..j).all(|k| log_zeta + logy[k] < zmax[k].ln());
                if valid {
                    for k in j..n {
                        zmax[k] = zmax[k].max((log_zeta + logy[k]).exp());
                    }
                }
                e += rng.sample::<f64, _>(Exp1);
                zeta = 1.0 / e;
            }
        }
        zmax
    }
}

/// One Brown–Resnick field with variogram `(h/rho_r)^alpha_r`.
pub fn brown_resnick_sample<R: Rng + ?Sized>(
    coords: &[[f64; 2]],
    rho_r: f64,
    alpha_r: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(BrownResnickSampler::new(coords, alpha_r)?.sample(rho_r, rng))
}

/// Closed-form pairwise extremal coefficient `2Φ(√γ/2)`.
pub fn br_extremal_coefficient(gamma: f64) -> f64 {
    2.0 * crate::stats::norm_cdf(gamma.sqrt() / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::stats::{ks_critical, ks_statistic};

    fn frechet_cdf(z: f64) -> f64 {
        if z <= 0.0 {
            0.0
        } else {
            (-1.0 / z).exp()
        }
    }

    #[test]
    fn single_site_margin_is_unit_frechet() {
        let s = BrownResnickSampler::new(&[[0.5, 0.5]], 1.0).unwrap();
        let mut rng = stream_rng(5, 0);
        let xs: Vec<f64> = (0..50_000).map(|_| s.sample(0.1, &mut rng)[0]).collect();
        assert!(ks_statistic(&xs, frechet_cdf) < ks_critical(xs.len(), 0.01));
    }

    #[test]
    fn pair_extremal_coefficient() {
        // gamma(h) = 1 at h = rho
        let s = BrownResnickSampler::new(&[[0.2, 0.2], [0.5, 0.6]], 1.0).unwrap();
        let rho = 0.5;
        let mut rng = stream_rng(6, 0);
        let n = 50_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let z = s.sample(rho, &mut rng);
            acc += 1.0 / z[0].max(z[1]);
        }
        let theta = n as f64 / acc;
        let se = theta / (n as f64).sqrt();
        let truth = br_extremal_coefficient(1.0);
        assert!((truth - 1.3829).abs() < 1e-4);
        assert!((theta - truth).abs() < 3.0 * se + 1e-3, "{theta} vs {truth}");
    }

    #[test]
    fn huge_range_is_fully_dependent() {
        let s = BrownResnickSampler::new(&[[0.0, 0.0], [1.0, 1.0], [0.3, 0.7]], 1.0).unwrap();
        let mut rng = stream_rng(8, 0);
        for _ in 0..100 {
            let z = s.sample(1e12, &mut rng);
            assert!((z[0] / z[1] - 1.0).abs() < 1e-4 && (z[0] / z[2] - 1.0).abs() < 1e-4);
        }
    }
}
