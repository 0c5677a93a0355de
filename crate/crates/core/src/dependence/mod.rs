//! The spatial mixture `V = δ g_R(R) + (1 − δ) g_W(W)`.
//!
//! `R` is a Brown–Resnick field with a nugget, `W` a Gaussian field with a
//! nugget, both transformed to standard exponential margins, so that `V`
//! is hypoexponential and `U = G(V; δ)` is uniform at every site.

mod brown_resnick;
mod gp;
mod hypoexp;

pub use brown_resnick::{br_extremal_coefficient, brown_resnick_sample, BrownResnickSampler};
pub use gp::{
    cholesky_with_jitter, gp_correlation, gp_sample, powered_exp_corr, GpFactor, JITTER,
    MAX_JITTER_ATTEMPTS,
};
pub use hypoexp::{
    clamp_delta, hypoexp_cdf, hypoexp_cdf_unchecked, hypoexp_pdf, hypoexp_quantile, hypoexp_sf,
    DELTA_CLAMP, SERIES_HALF_WIDTH,
};

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{NpmmError, Result};
use crate::stats::{norm_cdf, norm_sf};

/// Default tie `ρ_R = 0.19 ρ_W`.
pub const RHO_R_FACTOR: f64 = 0.19;
pub const ALPHA_R: f64 = 1.0;
pub const ALPHA_W: f64 = 1.0;

/// Uniform scores are kept this far inside (0, 1).
pub const U_CLAMP: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteSet {
    pub coords: Vec<[f64; 2]>,
    /// 1 or 2.
    pub region: Vec<u8>,
}

impl SiteSet {
    pub fn new(coords: Vec<[f64; 2]>, region: Vec<u8>) -> Result<Self> {
        if coords.len() != region.len() {
            return Err(NpmmError::InvalidArgument(format!(
                "{} coordinates but {} region labels",
                coords.len(),
                region.len()
            )));
        }
        for (i, c) in coords.iter().enumerate() {
            if !c.iter().all(|x| (0.0..=1.0).contains(x)) {
                return Err(NpmmError::InvalidArgument(format!(
                    "site {i} at ({}, {}) lies outside the unit square",
                    c[0], c[1]
                )));
            }
        }
        if let Some(i) = region.iter().position(|&r| r != 1 && r != 2) {
            return Err(NpmmError::InvalidArgument(format!(
                "site {i} has region label {}, expected 1 or 2",
                region[i]
            )));
        }
        Ok(SiteSet { coords, region })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        gp::distance(&self.coords[i], &self.coords[j])
    }

    pub fn subset(&self, idx: &[usize]) -> SiteSet {
        SiteSet {
            coords: idx.iter().map(|&i| self.coords[i]).collect(),
            region: idx.iter().map(|&i| self.region[i]).collect(),
        }
    }

    /// Largest nearest-neighbour distance over sites.
    pub fn max_nearest_distance(&self) -> f64 {
        (0..self.len())
            .map(|i| {
                (0..self.len())
                    .filter(|&j| j != i)
                    .map(|j| self.distance(i, j))
                    .fold(f64::INFINITY, f64::min)
            })
            .filter(|d| d.is_finite())
            .fold(0.0, f64::max)
    }
}

/// `θ₂`: probit coefficients per region plus the range and spatial share.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DependenceParams {
    pub beta10: f64,
    pub beta11: f64,
    pub beta20: f64,
    pub beta21: f64,
    pub rho: f64,
    pub r: f64,
}

impl DependenceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) || !(self.r > 0.0 && self.r < 1.0) {
            return Err(NpmmError::InvalidParameter(format!(
                "rho and r must lie in (0,1), got rho={}, r={}",
                self.rho, self.r
            )));
        }
        Ok(())
    }

    pub fn beta(&self, region: u8) -> (f64, f64) {
        if region == 1 {
            (self.beta10, self.beta11)
        } else {
            (self.beta20, self.beta21)
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.beta10,
            self.beta11,
            self.beta20,
            self.beta21,
            self.rho,
            self.r,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        DependenceParams {
            beta10: a[0],
            beta11: a[1],
            beta20: a[2],
            beta21: a[3],
            rho: a[4],
            r: a[5],
        }
    }
}

/// Region weights `δ_1t`, `δ_2t` for every time index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaField {
    pub delta1: Vec<f64>,
    pub delta2: Vec<f64>,
}

impl DeltaField {
    pub fn from_link(params: &DependenceParams, z1: &[f64], z2: &[f64]) -> Self {
        DeltaField {
            delta1: z1
                .iter()
                .map(|&z| delta_link(params.beta10, params.beta11, z))
                .collect(),
            delta2: z2
                .iter()
                .map(|&z| delta_link(params.beta20, params.beta21, z))
                .collect(),
        }
    }

    pub fn constant(delta1: f64, delta2: f64, t: usize) -> Self {
        DeltaField {
            delta1: vec![delta1; t],
            delta2: vec![delta2; t],
        }
    }

    pub fn len(&self) -> usize {
        self.delta1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta1.is_empty()
    }

    #[inline]
    pub fn weight(&self, region: u8, t: usize) -> f64 {
        if region == 1 {
            self.delta1[t]
        } else {
            self.delta2[t]
        }
    }

    /// Time-averaged weight of each region.
    pub fn means(&self) -> (f64, f64) {
        (
            crate::stats::mean(&self.delta1),
            crate::stats::mean(&self.delta2),
        )
    }
}

/// Probit link, clamped away from 0 and 1.
#[inline]
pub fn delta_link(beta0: f64, beta1: f64, z: f64) -> f64 {
    clamp_delta(norm_cdf(beta0 + beta1 * z))
}

/// Unit Fréchet to standard exponential.
pub fn g_r(v: f64) -> Result<f64> {
    if !(v > 0.0) {
        return Err(NpmmError::InvalidArgument(format!(
            "g_R requires a positive argument, got {v}"
        )));
    }
    Ok(g_r_unchecked(v))
}

#[inline]
pub fn g_r_unchecked(v: f64) -> f64 {
    let q = (-1.0 / v).exp();
    if q < 0.5 {
        -(-q).ln_1p()
    } else {
        -(-(-1.0 / v).exp_m1()).ln()
    }
}

/// Standard normal to standard exponential.
#[inline]
pub fn g_w(w: f64) -> f64 {
    if w > 0.0 {
        -norm_sf(w).ln()
    } else {
        -(-norm_cdf(w)).ln_1p()
    }
}

/// `max{r R₁, (1 − r) R₂}` with fresh unit-Fréchet `R₂`.
pub fn msp_with_nugget<R: Rng + ?Sized>(r1: &[f64], r: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&r) {
        return Err(NpmmError::InvalidArgument(format!(
            "nugget proportion must lie in [0,1], got {r}"
        )));
    }
    Ok(r1
        .iter()
        .map(|&x| {
            let e: f64 = rng.sample(Exp1);
            (r * x).max((1.0 - r) / e)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureRealization {
    /// `v[t][s]`.
    pub v: Vec<Vec<f64>>,
    /// `u[t][s]`.
    pub u: Vec<Vec<f64>>,
}

/// Simulator for one fixed site configuration.
#[derive(Debug, Clone)]
pub struct MixtureSimulator {
    coords: Vec<[f64; 2]>,
    region: Vec<u8>,
    br: BrownResnickSampler,
    pub rho_r_factor: f64,
}

impl MixtureSimulator {
    pub fn new(sites: &SiteSet, rho_r_factor: f64) -> Result<Self> {
        Ok(MixtureSimulator {
            coords: sites.coords.clone(),
            region: sites.region.clone(),
            br: BrownResnickSampler::new(&sites.coords, ALPHA_R)?,
            rho_r_factor,
        })
    }

    pub fn gp_factor(&self, rho: f64, r: f64) -> Result<GpFactor> {
        GpFactor::new(&self.coords, rho, ALPHA_W, r)
    }

    /// One replicate given region weights; `gp` must match `(rho, r)`.
    pub fn replicate<R: Rng + ?Sized>(
        &self,
        delta1: f64,
        delta2: f64,
        rho: f64,
        r: f64,
        gp: &GpFactor,
        rng: &mut R,
    ) -> (Vec<f64>, Vec<f64>) {
        let r1 = self.br.sample(self.rho_r_factor * rho, rng);
        let w = gp.sample(rng);
        let mut v = Vec::with_capacity(r1.len());
        let mut u = Vec::with_capacity(r1.len());
        for s in 0..r1.len() {
            let e: f64 = rng.sample(Exp1);
            let rs = (r * r1[s]).max((1.0 - r) / e);
            let d = if self.region[s] == 1 { delta1 } else { delta2 };
            let d = clamp_delta(d);
            let vs = d * g_r_unchecked(rs) + (1.0 - d) * g_w(w[s]);
            v.push(vs);
            u.push(hypoexp_cdf_unchecked(vs, d).clamp(U_CLAMP, 1.0 - U_CLAMP));
        }
        (v, u)
    }
}

/// `T` independent replicates of the mixture at `sites`.
pub fn mixture_sample<R: Rng + ?Sized>(
    sites: &SiteSet,
    deltas: &DeltaField,
    params: &DependenceParams,
    rho_r_factor: f64,
    t_count: usize,
    rng: &mut R,
) -> Result<MixtureRealization> {
    params.validate()?;
    if deltas.len() < t_count {
        return Err(NpmmError::InvalidArgument(format!(
            "delta field covers {} time indices, {t_count} requested",
            deltas.len()
        )));
    }
    let sim = MixtureSimulator::new(sites, rho_r_factor)?;
    let gp = sim.gp_factor(params.rho, params.r)?;
    let mut out = MixtureRealization {
        v: Vec::with_capacity(t_count),
        u: Vec::with_capacity(t_count),
    };
    for t in 0..t_count {
        let (v, u) = sim.replicate(
            deltas.delta1[t],
            deltas.delta2[t],
            params.rho,
            params.r,
            &gp,
            rng,
        );
        out.v.push(v);
        out.u.push(u);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::stats::{ks_critical, ks_statistic};

    fn sites3() -> SiteSet {
        SiteSet::new(vec![[0.1, 0.2], [0.4, 0.5], [0.9, 0.3]], vec![1, 1, 2]).unwrap()
    }

    #[test]
    fn site_set_validation() {
        assert!(SiteSet::new(vec![[1.2, 0.0]], vec![1]).is_err());
        assert!(SiteSet::new(vec![[0.2, 0.0]], vec![3]).is_err());
    }

    #[test]
    fn link_examples() {
        assert_eq!(delta_link(0.0, 0.0, 3.7), 0.5);
        assert!((delta_link(-1.0, 1.8, 0.0) - 0.158_655_253_931_457).abs() < 1e-12);
        assert!(delta_link(-1.0, 1.8, 0.1) > delta_link(-1.0, 1.8, 0.0));
        assert_eq!(delta_link(-50.0, 0.0, 0.0), DELTA_CLAMP);
    }

    #[test]
    fn link_matches_independent_erf() {
        // Φ(x) = (1 + erf(x/√2))/2, a different special function from erfc.
        for i in 0..200 {
            let x = -4.0 + 0.04 * i as f64;
            let alt = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
            assert!((delta_link(x, 0.0, 0.0) - alt).abs() < 1e-12);
        }
    }

    #[test]
    fn transform_identities() {
        for &p in &[0.01, 0.3, 0.9, 0.999] {
            let frechet_q = -1.0 / f64::ln(p);
            assert!((g_r(frechet_q).unwrap() - (-(1.0 - p as f64).ln())).abs() < 1e-12);
        }
        assert!((g_w(0.0) - 2.0f64.ln()).abs() < 1e-15);
        assert!(g_r(0.0).is_err());
        assert!(g_r(-1.0).is_err());
    }

    #[test]
    fn transformed_draws_are_exponential() {
        let mut rng = stream_rng(21, 0);
        let n = 100_000;
        let exp_cdf = |x: f64| 1.0 - (-x).exp();
        let a: Vec<f64> = (0..n)
            .map(|_| g_r_unchecked(1.0 / rng.sample::<f64, _>(Exp1)))
            .collect();
        let b: Vec<f64> = (0..n)
            .map(|_| g_w(rng.sample::<f64, _>(rand_distr::StandardNormal)))
            .collect();
        let crit = ks_critical(n, 0.01);
        assert!(ks_statistic(&a, exp_cdf) < crit);
        assert!(ks_statistic(&b, exp_cdf) < crit);
    }

    #[test]
    fn nugget_edges_and_margin() {
        let mut rng = stream_rng(2, 0);
        let r1 = vec![0.5, 2.0, 7.0];
        assert_eq!(msp_with_nugget(&r1, 1.0, &mut rng).unwrap(), r1);
        assert!(msp_with_nugget(&r1, 1.5, &mut rng).is_err());
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| {
                let r1 = 1.0 / rng.sample::<f64, _>(Exp1);
                msp_with_nugget(&[r1], 0.88, &mut rng).unwrap()[0]
            })
            .collect();
        let frechet = |z: f64| if z <= 0.0 { 0.0 } else { (-1.0 / z).exp() };
        assert!(ks_statistic(&xs, frechet) < ks_critical(n, 0.01));
    }

    #[test]
    fn mixture_scores_are_uniform() {
        let sites = sites3();
        let params = DependenceParams {
            beta10: 0.0,
            beta11: 0.0,
            beta20: 0.0,
            beta21: 0.0,
            rho: 0.3,
            r: 0.8,
        };
        let mut rng = stream_rng(2, 0);
        let t = 100_000;
        let deltas = DeltaField::constant(0.3, 0.7, t);
        let m = mixture_sample(&sites, &deltas, &params, RHO_R_FACTOR, t, &mut rng).unwrap();
        for s in 0..3 {
            let us: Vec<f64> = m.u.iter().map(|row| row[s]).collect();
            let ks = ks_statistic(&us, |x| x);
            assert!(ks < ks_critical(t, 0.01), "site {s}: {ks}");
        }
    }

    #[test]
    fn extreme_weights_reduce_to_one_component() {
        let sites = sites3();
        let params = DependenceParams {
            beta10: 0.0,
            beta11: 0.0,
            beta20: 0.0,
            beta21: 0.0,
            rho: 0.3,
            r: 0.8,
        };
        let deltas = DeltaField::constant(0.0, 0.0, 5_000);
        let mut rng = stream_rng(1, 0);
        let m = mixture_sample(&sites, &deltas, &params, RHO_R_FACTOR, 5_000, &mut rng).unwrap();
        let v0: Vec<f64> = m.v.iter().map(|r| r[0]).collect();
        assert!(ks_statistic(&v0, |x| 1.0 - (-x).exp()) < ks_critical(v0.len(), 0.01));
    }
}
