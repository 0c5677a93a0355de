//! Exact Gaussian-copula conditionals for the pure-GP case (δ ≡ 0).
//!
//! With δ ≡ 0 the scores are `U = Φ(W)`, so every Vecchia factor is a
//! univariate Gaussian conditional on the normal scale.

use nalgebra::{DMatrix, DVector};

use super::VecchiaStructure;
use crate::dependence::{cholesky_with_jitter, gp_correlation, SiteSet, ALPHA_W};
use crate::error::Result;
use crate::stats::{norm_cdf, norm_ln_pdf, norm_quantile};

/// Precomputed kriging weights and conditional sds per ordered position.
#[derive(Debug, Clone)]
pub struct GaussianVecchia {
    weights: Vec<Vec<f64>>,
    sd: Vec<f64>,
    neighbors: Vec<Vec<usize>>,
}

/// Kriging weights and conditional sd of position `p` given its neighbours.
pub fn gaussian_conditional_params(
    ordered: &[[f64; 2]],
    neighbors: &[usize],
    p: usize,
    rho: f64,
    r: f64,
) -> Result<(Vec<f64>, f64)> {
    if neighbors.is_empty() {
        return Ok((Vec::new(), 1.0));
    }
    let corr = |a: usize, b: usize| {
        if a == b {
            1.0
        } else {
            let h = (ordered[a][0] - ordered[b][0]).hypot(ordered[a][1] - ordered[b][1]);
            r * (-(h / rho).powf(ALPHA_W)).exp()
        }
    };
    let k = neighbors.len();
    let s_nn = DMatrix::from_fn(k, k, |a, b| corr(neighbors[a], neighbors[b]));
    let s_np = DVector::from_fn(k, |a, _| corr(neighbors[a], p));
    let l = cholesky_with_jitter(s_nn)?;
    let y = l.solve_lower_triangular(&s_np).expect("non-singular factor");
    let b = l.transpose().solve_upper_triangular(&y).expect("non-singular factor");
    let var = (1.0 - s_np.dot(&b)).max(1e-300);
    Ok((b.iter().copied().collect(), var.sqrt()))
}

impl GaussianVecchia {
    pub fn new(sites: &SiteSet, structure: &VecchiaStructure, rho: f64, r: f64) -> Result<Self> {
        let ordered: Vec<[f64; 2]> = structure.ordering.iter().map(|&s| sites.coords[s]).collect();
        let mut weights = Vec::with_capacity(ordered.len());
        let mut sd = Vec::with_capacity(ordered.len());
        for (p, nb) in structure.neighbors.iter().enumerate() {
            let (w, s) = gaussian_conditional_params(&ordered, nb, p, rho, r)?;
            weights.push(w);
            sd.push(s);
        }
        Ok(GaussianVecchia {
            weights,
            sd,
            neighbors: structure.neighbors.clone(),
        })
    }

    /// Conditional mean and sd of `z_p` given normal scores `z_ord`.
    pub fn conditional(&self, p: usize, z_ord: &[f64]) -> (f64, f64) {
        let mu = self.neighbors[p]
            .iter()
            .zip(&self.weights[p])
            .map(|(&q, w)| w * z_ord[q])
            .sum();
        (mu, self.sd[p])
    }

    /// Log conditional copula density of position `p` given ordered scores.
    pub fn conditional_logdensity(&self, p: usize, u_ord: &[f64]) -> f64 {
        let z: Vec<f64> = u_ord.iter().map(|&u| norm_quantile(u)).collect();
        self.conditional_logdensity_z(p, &z)
    }

    pub fn conditional_logdensity_z(&self, p: usize, z_ord: &[f64]) -> f64 {
        let (mu, sd) = self.conditional(p, z_ord);
        norm_ln_pdf((z_ord[p] - mu) / sd) - sd.ln() - norm_ln_pdf(z_ord[p])
    }

    /// Conditional CDF of the score at `p`.
    pub fn conditional_cdf(&self, p: usize, u_ord: &[f64]) -> f64 {
        let z: Vec<f64> = u_ord.iter().map(|&u| norm_quantile(u)).collect();
        let (mu, sd) = self.conditional(p, &z);
        norm_cdf((z[p] - mu) / sd)
    }

    /// Sum of all conditional log densities (ordered scores).
    pub fn loglik(&self, u_ord: &[f64]) -> f64 {
        let z: Vec<f64> = u_ord.iter().map(|&u| norm_quantile(u)).collect();
        (0..z.len())
            .map(|p| self.conditional_logdensity_z(p, &z))
            .sum()
    }
}

/// Exact Gaussian copula log density of `u` (original site order).
pub fn gaussian_copula_logdensity(sites: &SiteSet, rho: f64, r: f64, u: &[f64]) -> Result<f64> {
    let corr = gp_correlation(&sites.coords, rho, ALPHA_W, r);
    let l = cholesky_with_jitter(corr)?;
    let z = DVector::from_iterator(u.len(), u.iter().map(|&x| norm_quantile(x)));
    let y = l.solve_lower_triangular(&z).expect("non-singular factor");
    let log_det: f64 = l.diagonal().iter().map(|d| d.ln()).sum();
    let joint: f64 = y.iter().map(|&v| norm_ln_pdf(v)).sum::<f64>() - log_det;
    Ok(joint - z.iter().map(|&v| norm_ln_pdf(v)).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::vecchia::build_structure;
    use rand::Rng;

    #[test]
    fn full_conditioning_equals_joint_density() {
        let mut rng = stream_rng(17, 0);
        for n in [2usize, 5, 8] {
            let coords: Vec<[f64; 2]> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
            let sites = SiteSet::new(coords, vec![1; n]).unwrap();
            let v = build_structure(&sites, n.saturating_sub(1).max(1)).unwrap();
            let g = GaussianVecchia::new(&sites, &v, 0.3, 0.9).unwrap();
            for _ in 0..20 {
                let u: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
                let u_ord: Vec<f64> = v.ordering.iter().map(|&s| u[s]).collect();
                let exact = gaussian_copula_logdensity(&sites, 0.3, 0.9, &u).unwrap();
                assert!((g.loglik(&u_ord) - exact).abs() < 1e-6, "n={n}");
            }
        }
    }

    #[test]
    fn conditional_density_integrates_to_one() {
        let sites = SiteSet::new(vec![[0.1, 0.1], [0.2, 0.15], [0.4, 0.3]], vec![1; 3]).unwrap();
        let v = build_structure(&sites, 2).unwrap();
        let g = GaussianVecchia::new(&sites, &v, 0.5, 0.95).unwrap();
        let rule = crate::stats::gauss_legendre(200);
        let u = [0.3, 0.8, 0.5];
        let total: f64 = [0.0, 1e-4, 0.01, 0.5, 0.99, 1.0 - 1e-4, 1.0]
            .windows(2)
            .map(|w| {
                crate::stats::integrate_gl(
                    |x| g.conditional_logdensity(2, &[u[0], u[1], x]).exp(),
                    w[0],
                    w[1],
                    &rule,
                )
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }
}
