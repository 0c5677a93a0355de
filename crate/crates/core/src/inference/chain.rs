use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::likelihood::FactorModel;
use super::mle::{fit_gev_mle, pooled_logprior, pooled_mle};
use super::store::PosteriorStore;
use super::stvc::StvcField;
use super::{
    from_transformed, normal_logpdf, to_transformed, FitData, MarginalMode, McmcConfig, COEFF_NAMES,
};
use crate::dependence::{cholesky_with_jitter, delta_link, DeltaField, DependenceParams, U_CLAMP};
use crate::error::{NpmmError, Result};
use crate::marginal::{linear_location, GevParams, N_COEFFS};
use crate::optim::nelder_mead;

const RW_OPTIMAL: f64 = 2.38;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    pub name: String,
    pub log_scale: f64,
    /// Counters cover post-burn-in iterations only.
    pub accepted: u64,
    pub proposed: u64,
    /// Running sum and count of `log_scale` over the second half of burn-in.
    #[serde(default)]
    avg_sum: f64,
    #[serde(default)]
    avg_n: u64,
}

impl BlockStats {
    fn new(name: String, scale: f64) -> Self {
        BlockStats {
            name,
            log_scale: scale.ln(),
            accepted: 0,
            proposed: 0,
            avg_sum: 0.0,
            avg_n: 0,
        }
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    /// Natural-scale coefficients per site; identical across sites when pooled.
    pub coeffs: Vec<[f64; N_COEFFS]>,
    pub dep: DependenceParams,
    /// One entry per coefficient in STVC mode (`None` for inactive ones);
    /// empty when pooled.
    pub fields: Vec<Option<StvcField>>,
    pub blocks: Vec<BlockStats>,
    pub iteration: usize,
}

/// Time-averaged weight for one region's link coefficients.
pub fn delta_bar(beta0: f64, beta1: f64, z: &[f64]) -> f64 {
    let d: Vec<f64> = z.iter().map(|&z| delta_link(beta0, beta1, z)).collect();
    crate::stats::mean(&d)
}

#[derive(Debug, Clone)]
struct Cache {
    /// `u_ord[t][pos]`.
    u_ord: Vec<Vec<f64>>,
    /// `marg[s][t]`.
    marg: Vec<Vec<f64>>,
    /// `fac[pos][t]`.
    fac: Vec<Vec<f64>>,
    deltas: DeltaField,
}

fn sum2(v: &[Vec<f64>]) -> f64 {
    v.iter().map(|r| r.iter().sum::<f64>()).sum()
}

impl Cache {
    fn total(&self) -> f64 {
        sum2(&self.fac) + sum2(&self.marg)
    }
}

fn site_scores(data: &FitData, s: usize, c: &[f64; N_COEFFS]) -> (Vec<f64>, Vec<f64>) {
    let mut u = Vec::with_capacity(data.n_years());
    let mut m = Vec::with_capacity(data.n_years());
    for t in 0..data.n_years() {
        let p = GevParams {
            mu: linear_location(c, &data.covs[t][s]),
            sigma: c[6],
            xi: c[7],
        };
        let y = data.y[t][s];
        u.push(p.cdf_unchecked(y).clamp(U_CLAMP, 1.0 - U_CLAMP));
        m.push(p.logpdf_unchecked(y));
    }
    (u, m)
}

fn all_factors<F: FactorModel + ?Sized>(
    model: &F,
    u_ord: &[Vec<f64>],
    dep: &DependenceParams,
    deltas: &DeltaField,
) -> Vec<Vec<f64>> {
    (0..model.structure().n_sites())
        .map(|p| model.factor_logdens(p, u_ord, dep.rho, dep.r, deltas))
        .collect()
}

fn build_cache<F: FactorModel + ?Sized>(
    data: &FitData,
    model: &F,
    coeffs: &[[f64; N_COEFFS]],
    dep: &DependenceParams,
) -> Cache {
    let positions = model.structure().positions();
    let n = data.n_sites();
    let mut u_ord = vec![vec![0.5; n]; data.n_years()];
    let mut marg = Vec::with_capacity(n);
    for s in 0..n {
        let (u, m) = site_scores(data, s, &coeffs[s]);
        for (t, ut) in u.into_iter().enumerate() {
            u_ord[t][positions[s]] = ut;
        }
        marg.push(m);
    }
    let deltas = DeltaField::from_link(dep, &data.z1, &data.z2);
    let fac = all_factors(model, &u_ord, dep, &deltas);
    Cache {
        u_ord,
        marg,
        fac,
        deltas,
    }
}

fn log_prior(state: &ChainState, config: &McmcConfig) -> f64 {
    let p = &config.priors;
    let mut lp = 0.0;
    match &config.marginal {
        MarginalMode::Pooled { active } => {
            lp += pooled_logprior(&to_transformed(&state.coeffs[0]), active, p);
        }
        MarginalMode::Stvc { .. } => {
            for (k, f) in state.fields.iter().enumerate() {
                if let Some(f) = f {
                    for (s, c) in state.coeffs.iter().enumerate() {
                        lp += f.site_logprior(s, to_transformed(c)[k]);
                    }
                    lp += f.latent_logprior() + f.hyper_logprior(p);
                }
            }
        }
    }
    let d = &state.dep;
    for b in [d.beta10, d.beta11, d.beta20, d.beta21] {
        lp += normal_logpdf(b, 0.0, p.beta_sd);
    }
    if !(d.rho > 0.0 && d.rho < 1.0 && d.r > 0.0 && d.r < 1.0) {
        return f64::NEG_INFINITY;
    }
    lp
}

/// Synthetic-likelihood log posterior: Vecchia factors at the probability
/// scores, GEV log densities, and log priors (densities of `ρ`, `r` on
/// their natural scale).
pub fn log_posterior<F: FactorModel + ?Sized>(
    state: &ChainState,
    data: &FitData,
    model: &F,
    config: &McmcConfig,
) -> f64 {
    let lp = log_prior(state, config);
    if !lp.is_finite() {
        return f64::NEG_INFINITY;
    }
    let v = build_cache(data, model, &state.coeffs, &state.dep).total() + lp;
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

#[inline]
fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn logit_jacobian(rho: f64, r: f64) -> f64 {
    rho.ln() + (1.0 - rho).ln() + r.ln() + (1.0 - r).ln()
}

fn standard_normals<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn proposal_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = cov.nrows() as f64;
    cholesky_with_jitter(cov * (RW_OPTIMAL * RW_OPTIMAL / d))
}

fn dep_from_vec(x: &[f64]) -> DependenceParams {
    DependenceParams {
        beta10: x[0],
        beta11: x[1],
        beta20: x[2],
        beta21: x[3],
        rho: logistic(x[4]),
        r: logistic(x[5]),
    }
}

/// Penalised mode of the dependence parameters with the margins held fixed,
/// on the (β, logit ρ, logit r) scale. Falls back to `start` if the search
/// does not improve on it.
fn dependence_mode<F: FactorModel + ?Sized>(
    data: &FitData,
    model: &F,
    coeffs: &[[f64; N_COEFFS]],
    start: DependenceParams,
    beta_sd: f64,
) -> DependenceParams {
    let u_ord = build_cache(data, model, coeffs, &start).u_ord;
    let objective = |x: &[f64]| {
        let dep = dep_from_vec(x);
        let deltas = DeltaField::from_link(&dep, &data.z1, &data.z2);
        let lp: f64 = x[..4].iter().map(|&b| normal_logpdf(b, 0.0, beta_sd)).sum();
        -(sum2(&all_factors(model, &u_ord, &dep, &deltas)) + lp + logit_jacobian(dep.rho, dep.r))
    };
    let x0 = [start.beta10, start.beta11, start.beta20, start.beta21, logit(start.rho), logit(start.r)];
    let f0 = objective(&x0);
    let fit = nelder_mead(&objective, &x0, &[0.5; 6], 1e-9, 2000);
    if fit.value.is_finite() && (!f0.is_finite() || fit.value < f0) {
        dep_from_vec(&fit.x)
    } else {
        start
    }
}

/// One Metropolis-within-Gibbs chain with cached likelihood terms.
pub struct Sampler<'a, F: FactorModel + ?Sized> {
    data: &'a FitData,
    model: &'a F,
    config: &'a McmcConfig,
    pub state: ChainState,
    cache: Cache,
    positions: Vec<usize>,
    dependents: Vec<Vec<usize>>,
    /// Positions whose factor reads `δ_1` (index 0) or `δ_2` (index 1).
    region_affected: [Vec<usize>; 2],
    active_idx: Vec<usize>,
    /// Lower factors of the θ₁ proposal covariance: one when pooled, one per site for STVC.
    proposal: Vec<DMatrix<f64>>,
    dist: DMatrix<f64>,
}

impl<'a, F: FactorModel + ?Sized> Sampler<'a, F> {
    /// Starts from independence MLEs of the marginal coefficients.
    pub fn new(data: &'a FitData, model: &'a F, config: &'a McmcConfig) -> Result<Self> {
        config.validate()?;
        data.validate()?;
        model.check_sites(&data.sites)?;
        let structure = model.structure();
        let n = data.n_sites();
        let active = config.marginal.active();
        let active_idx: Vec<usize> = (0..N_COEFFS).filter(|&k| active[k]).collect();
        let dist = DMatrix::from_fn(n, n, |i, j| data.sites.distance(i, j));
        let p = &config.priors;

        let mut blocks = Vec::new();
        let (coeffs, proposal, fields) = match &config.marginal {
            MarginalMode::Pooled { .. } => {
                let fit = pooled_mle(data, active, p)?;
                blocks.push(BlockStats::new("theta1".into(), 1.0));
                (vec![fit.coeffs; n], vec![proposal_factor(&fit.proposal_cov)?], Vec::new())
            }
            MarginalMode::Stvc { .. } => {
                let pooled = pooled_mle(data, active, p)?;
                let mut coeffs = Vec::with_capacity(n);
                let mut prop = Vec::with_capacity(n);
                for s in 0..n {
                    let y: Vec<f64> = data.y.iter().map(|r| r[s]).collect();
                    let x: Vec<_> = data.covs.iter().map(|r| r[s]).collect();
                    let fit = match fit_gev_mle(&y, &x, active, p) {
                        Ok(f) if f.loglik.is_finite() => f,
                        _ => pooled.clone(),
                    };
                    coeffs.push(fit.coeffs);
                    prop.push(proposal_factor(&fit.proposal_cov)?);
                    blocks.push(BlockStats::new(format!("site.{s}"), 1.0));
                }
                let mut fields = Vec::with_capacity(N_COEFFS);
                for k in 0..N_COEFFS {
                    if active[k] {
                        let vals: Vec<f64> = coeffs.iter().map(|c| to_transformed(c)[k]).collect();
                        fields.push(Some(StvcField::new(&vals, &dist, p)?));
                        blocks.push(BlockStats::new(format!("range.{}", COEFF_NAMES[k]), config.range_step));
                    } else {
                        fields.push(None);
                    }
                }
                (coeffs, prop, fields)
            }
        };

        let start = DependenceParams {
            beta10: 0.0,
            beta11: 0.0,
            beta20: 0.0,
            beta21: 0.0,
            rho: 0.5,
            r: 0.5,
        };
        let dep = dependence_mode(data, model, &coeffs, start, p.beta_sd);
        blocks.push(BlockStats::new("beta1".into(), config.beta_step));
        blocks.push(BlockStats::new("beta2".into(), config.beta_step));
        blocks.push(BlockStats::new("dependence".into(), config.dep_step));
        let state = ChainState {
            coeffs,
            dep,
            fields,
            blocks,
            iteration: 0,
        };

        let regions = &data.sites.region;
        let mut region_affected = [Vec::new(), Vec::new()];
        for pos in 0..structure.n_sites() {
            let own = regions[structure.ordering[pos]];
            let mixed = structure.neighbors[pos]
                .iter()
                .any(|&q| regions[structure.ordering[q]] != own);
            for (i, list) in region_affected.iter_mut().enumerate() {
                if mixed || own as usize == i + 1 {
                    list.push(pos);
                }
            }
        }
        let cache = build_cache(data, model, &state.coeffs, &state.dep);
        let sampler = Sampler {
            data,
            model,
            config,
            state,
            cache,
            positions: structure.positions(),
            dependents: structure.dependents(),
            region_affected,
            active_idx,
            proposal,
            dist,
        };
        sampler.check_finite()?;
        Ok(sampler)
    }

    fn check_finite(&self) -> Result<()> {
        let lp = self.log_posterior();
        if !lp.is_finite() {
            return Err(NpmmError::Initialization(format!(
                "log posterior at the starting state is {lp}"
            )));
        }
        Ok(())
    }

    /// Replaces the current position and rebuilds every cached term.
    pub fn set_state(&mut self, state: ChainState) -> Result<()> {
        if state.coeffs.len() != self.data.n_sites() || state.blocks.len() != self.state.blocks.len() {
            return Err(NpmmError::InvalidArgument(
                "state does not match the sampler's sites or blocks".into(),
            ));
        }
        self.cache = build_cache(self.data, self.model, &state.coeffs, &state.dep);
        self.state = state;
        self.check_finite()
    }

    /// Log posterior from the cached terms.
    pub fn log_posterior(&self) -> f64 {
        let lp = log_prior(&self.state, self.config);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        let v = self.cache.total() + lp;
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }

    pub fn deltas(&self) -> &DeltaField {
        &self.cache.deltas
    }

    fn block(&self, name: &str) -> usize {
        self.state
            .blocks
            .iter()
            .position(|b| b.name == name)
            .expect("block registered at construction")
    }

    fn scale(&self, b: usize) -> f64 {
        self.state.blocks[b].log_scale.exp()
    }

    /// Adapts on the acceptance probability `min(1, e^ratio)` rather than
    /// the 0/1 outcome: same mean, far less noise over a short burn-in.
    fn record(&mut self, b: usize, accepted: bool, log_ratio: f64) {
        let it = self.state.iteration;
        let blk = &mut self.state.blocks[b];
        if it <= self.config.burn_in {
            let a = if log_ratio.is_nan() { 0.0 } else { log_ratio.min(0.0).exp() };
            blk.log_scale += (it as f64).powf(-self.config.adapt_exponent) * (a - self.config.target_accept);
            // Polyak averaging: the scale frozen for sampling is the mean
            // over the second half of burn-in, not the last noisy iterate.
            if 2 * it > self.config.burn_in {
                blk.avg_sum += blk.log_scale;
                blk.avg_n += 1;
            }
            if it == self.config.burn_in && blk.avg_n > 0 {
                blk.log_scale = blk.avg_sum / blk.avg_n as f64;
            }
        } else {
            blk.proposed += 1;
            if accepted {
                blk.accepted += 1;
            }
        }
    }

    fn decide<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
        let u: f64 = rng.random();
        !log_ratio.is_nan() && u.ln() < log_ratio
    }

    /// Factor sums for `positions` under the given inputs.
    fn factor_rows(
        &self,
        positions: &[usize],
        u_ord: &[Vec<f64>],
        dep: &DependenceParams,
        deltas: &DeltaField,
    ) -> Vec<Vec<f64>> {
        positions
            .iter()
            .map(|&p| self.model.factor_logdens(p, u_ord, dep.rho, dep.r, deltas))
            .collect()
    }

    fn all_positions(&self) -> Vec<usize> {
        (0..self.data.n_sites()).collect()
    }

    /// Site block of the STVC model; only factors that read site `s` are recomputed.
    pub fn update_site_block<R: Rng + ?Sized>(&mut self, s: usize, rng: &mut R) {
        let b = s;
        let scale = self.scale(b);
        let t_cur = to_transformed(&self.state.coeffs[s]);
        let z = standard_normals(self.active_idx.len(), rng);
        let step = &self.proposal[s] * z * scale;
        let mut t_new = t_cur;
        for (a, &k) in self.active_idx.iter().enumerate() {
            t_new[k] += step[a];
        }
        let c_new = from_transformed(&t_new);
        let (u_new, m_new) = site_scores(self.data, s, &c_new);
        let mut prior_delta = 0.0;
        for (k, f) in self.state.fields.iter().enumerate() {
            if let Some(f) = f {
                prior_delta += f.site_logprior(s, t_new[k]) - f.site_logprior(s, t_cur[k]);
            }
        }
        let pos = self.positions[s];
        let old_col: Vec<f64> = self.cache.u_ord.iter().map(|r| r[pos]).collect();
        for (t, &u) in u_new.iter().enumerate() {
            self.cache.u_ord[t][pos] = u;
        }
        let affected = if self.config.global_updates {
            self.all_positions()
        } else {
            self.dependents[pos].clone()
        };
        let dep = self.state.dep.clone();
        let rows = self.factor_rows(&affected, &self.cache.u_ord, &dep, &self.cache.deltas);
        let log_ratio = if self.config.global_updates {
            let mut marg = self.cache.marg.clone();
            marg[s] = m_new.clone();
            sum2(&rows) + sum2(&marg) - self.cache.total() + prior_delta
        } else {
            let fac_delta: f64 = affected
                .iter()
                .zip(&rows)
                .map(|(&q, r)| r.iter().sum::<f64>() - self.cache.fac[q].iter().sum::<f64>())
                .sum();
            let marg_delta = m_new.iter().sum::<f64>() - self.cache.marg[s].iter().sum::<f64>();
            fac_delta + marg_delta + prior_delta
        };
        let accepted = Self::decide(log_ratio, rng);
        if accepted {
            self.state.coeffs[s] = c_new;
            self.cache.marg[s] = m_new;
            for (q, r) in affected.into_iter().zip(rows) {
                self.cache.fac[q] = r;
            }
        } else {
            for (t, &u) in old_col.iter().enumerate() {
                self.cache.u_ord[t][pos] = u;
            }
        }
        self.record(b, accepted, log_ratio);
    }

    /// Shared coefficient block in pooled mode.
    fn update_pooled<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let b = 0;
        let scale = self.scale(b);
        let t_cur = to_transformed(&self.state.coeffs[0]);
        let z = standard_normals(self.active_idx.len(), rng);
        let step = &self.proposal[0] * z * scale;
        let mut t_new = t_cur;
        for (a, &k) in self.active_idx.iter().enumerate() {
            t_new[k] += step[a];
        }
        let c_new = from_transformed(&t_new);
        let coeffs = vec![c_new; self.data.n_sites()];
        let mut u_ord = self.cache.u_ord.clone();
        let mut marg = Vec::with_capacity(coeffs.len());
        for s in 0..coeffs.len() {
            let (u, m) = site_scores(self.data, s, &c_new);
            for (t, ut) in u.into_iter().enumerate() {
                u_ord[t][self.positions[s]] = ut;
            }
            marg.push(m);
        }
        let active = self.config.marginal.active();
        let prior_delta = pooled_logprior(&t_new, &active, &self.config.priors)
            - pooled_logprior(&t_cur, &active, &self.config.priors);
        let fac = all_factors(self.model, &u_ord, &self.state.dep, &self.cache.deltas);
        let log_ratio = sum2(&fac) + sum2(&marg) - self.cache.total() + prior_delta;
        let accepted = Self::decide(log_ratio, rng);
        if accepted {
            self.state.coeffs = coeffs;
            self.cache.u_ord = u_ord;
            self.cache.marg = marg;
            self.cache.fac = fac;
        }
        self.record(b, accepted, log_ratio);
    }

    /// Joint random walk on `(β_i0, β_i1)`; the region's weight series is
    /// recomputed through the link before evaluation.
    pub fn update_beta_block<R: Rng + ?Sized>(&mut self, region: u8, rng: &mut R) {
        let b = self.block(if region == 1 { "beta1" } else { "beta2" });
        let scale = self.scale(b);
        let (b0, b1) = self.state.dep.beta(region);
        let n0 = b0 + scale * rng.sample::<f64, _>(StandardNormal);
        let n1 = b1 + scale * rng.sample::<f64, _>(StandardNormal);
        let mut dep = self.state.dep.clone();
        let mut deltas = self.cache.deltas.clone();
        if region == 1 {
            dep.beta10 = n0;
            dep.beta11 = n1;
            deltas.delta1 = self.data.z1.iter().map(|&z| delta_link(n0, n1, z)).collect();
        } else {
            dep.beta20 = n0;
            dep.beta21 = n1;
            deltas.delta2 = self.data.z2.iter().map(|&z| delta_link(n0, n1, z)).collect();
        }
        let sd = self.config.priors.beta_sd;
        let prior_delta = normal_logpdf(n0, 0.0, sd) + normal_logpdf(n1, 0.0, sd)
            - normal_logpdf(b0, 0.0, sd)
            - normal_logpdf(b1, 0.0, sd);
        let affected = if self.config.global_updates {
            self.all_positions()
        } else {
            self.region_affected[region as usize - 1].clone()
        };
        let rows = self.factor_rows(&affected, &self.cache.u_ord, &dep, &deltas);
        let log_ratio = self.fac_delta(&affected, &rows) + prior_delta;
        let accepted = Self::decide(log_ratio, rng);
        if accepted {
            self.state.dep = dep;
            self.cache.deltas = deltas;
            for (q, r) in affected.into_iter().zip(rows) {
                self.cache.fac[q] = r;
            }
        }
        self.record(b, accepted, log_ratio);
    }

    fn fac_delta(&self, affected: &[usize], rows: &[Vec<f64>]) -> f64 {
        if self.config.global_updates {
            sum2(rows) + sum2(&self.cache.marg) - self.cache.total()
        } else {
            affected
                .iter()
                .zip(rows)
                .map(|(&q, r)| r.iter().sum::<f64>() - self.cache.fac[q].iter().sum::<f64>())
                .sum()
        }
    }

    /// Joint random walk on `(logit ρ, logit r)` with the logit Jacobian.
    pub fn update_dependence_scalars<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let b = self.block("dependence");
        let scale = self.scale(b);
        let (rho, r) = (self.state.dep.rho, self.state.dep.r);
        let rho_new = logistic(logit(rho) + scale * rng.sample::<f64, _>(StandardNormal));
        let r_new = logistic(logit(r) + scale * rng.sample::<f64, _>(StandardNormal));
        let inside = rho_new > 0.0 && rho_new < 1.0 && r_new > 0.0 && r_new < 1.0;
        let mut dep = self.state.dep.clone();
        dep.rho = rho_new;
        dep.r = r_new;
        let all = self.all_positions();
        let (rows, log_ratio) = if inside {
            let rows = self.factor_rows(&all, &self.cache.u_ord, &dep, &self.cache.deltas);
            let lr = self.fac_delta(&all, &rows) + logit_jacobian(rho_new, r_new) - logit_jacobian(rho, r);
            (rows, lr)
        } else {
            (Vec::new(), f64::NEG_INFINITY)
        };
        let accepted = Self::decide(log_ratio, rng);
        if accepted {
            self.state.dep = dep;
            self.cache.fac = rows;
        }
        self.record(b, accepted, log_ratio);
    }

    /// Conjugate sweeps and log-range steps for every active coefficient field.
    pub fn update_stvc_fields<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        for k in 0..self.state.fields.len() {
            if self.state.fields[k].is_none() {
                continue;
            }
            let vals: Vec<f64> = self.state.coeffs.iter().map(|c| to_transformed(c)[k]).collect();
            let b = self.block(&format!("range.{}", COEFF_NAMES[k]));
            let step = self.scale(b);
            let field = self.state.fields[k].as_mut().expect("checked above");
            field.gibbs(&vals, &self.config.priors, rng)?;
            let (accepted, log_ratio) = field.update_range(&self.dist, &self.config.priors, step, rng);
            self.record(b, accepted, log_ratio);
        }
        Ok(())
    }

    /// One full sweep over all blocks.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        self.state.iteration += 1;
        match self.config.marginal {
            MarginalMode::Pooled { .. } => self.update_pooled(rng),
            MarginalMode::Stvc { .. } => {
                for s in 0..self.data.n_sites() {
                    self.update_site_block(s, rng);
                }
                self.update_stvc_fields(rng)?;
            }
        }
        self.update_beta_block(1, rng);
        self.update_beta_block(2, rng);
        self.update_dependence_scalars(rng);
        Ok(())
    }

    pub fn columns(&self) -> Vec<String> {
        let mut cols = Vec::new();
        match self.config.marginal {
            MarginalMode::Pooled { .. } => cols.extend(COEFF_NAMES.iter().map(|s| s.to_string())),
            MarginalMode::Stvc { .. } => {
                for s in 0..self.data.n_sites() {
                    cols.extend(COEFF_NAMES.iter().map(|c| format!("{c}.s{s}")));
                }
                for (k, f) in self.state.fields.iter().enumerate() {
                    if f.is_some() {
                        for h in ["mean", "tau2", "nugget", "log_range"] {
                            cols.push(format!("{}.{h}", COEFF_NAMES[k]));
                        }
                    }
                }
            }
        }
        for c in ["beta10", "beta11", "beta20", "beta21", "rho", "r", "delta1_bar", "delta2_bar"] {
            cols.push(c.into());
        }
        cols
    }

    pub fn row(&self) -> Vec<f64> {
        let mut row = Vec::new();
        match self.config.marginal {
            MarginalMode::Pooled { .. } => row.extend_from_slice(&self.state.coeffs[0]),
            MarginalMode::Stvc { .. } => {
                for c in &self.state.coeffs {
                    row.extend_from_slice(c);
                }
                for f in self.state.fields.iter().flatten() {
                    row.extend([f.mean, f.tau2, f.nugget, f.log_range]);
                }
            }
        }
        let d = &self.state.dep;
        row.extend(d.to_array());
        row.push(delta_bar(d.beta10, d.beta11, &self.data.z1));
        row.push(delta_bar(d.beta20, d.beta21, &self.data.z2));
        row
    }
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub store: PosteriorStore,
    pub acceptance: BTreeMap<String, f64>,
    pub proposal_scales: BTreeMap<String, f64>,
    pub state: ChainState,
}

/// Runs a chain from the independence MLE; keeps every `thin`-th
/// post-burn-in state.
pub fn run_chain<F: FactorModel + ?Sized, R: Rng + ?Sized>(
    config: &McmcConfig,
    data: &FitData,
    model: &F,
    rng: &mut R,
) -> Result<ChainOutput> {
    let mut sampler = Sampler::new(data, model, config)?;
    let mut store = PosteriorStore::new(sampler.columns());
    store.draws.reserve(config.draws());
    for it in 1..=config.iterations {
        sampler.step(rng)?;
        if it > config.burn_in && (it - config.burn_in) % config.thin == 0 {
            store.draws.push(sampler.row());
        }
    }
    let acceptance = sampler
        .state
        .blocks
        .iter()
        .map(|b| (b.name.clone(), b.rate()))
        .collect();
    let proposal_scales = sampler
        .state
        .blocks
        .iter()
        .map(|b| (b.name.clone(), b.log_scale.exp()))
        .collect();
    Ok(ChainOutput {
        store,
        acceptance,
        proposal_scales,
        state: sampler.state,
    })
}
