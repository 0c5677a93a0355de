//! Posterior projections of extremal quantiles and joint exceedance counts.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bias::ScenarioCovariates;
use crate::dependence::{delta_link, DependenceParams, MixtureSimulator, SiteSet};
use crate::error::{NpmmError, Result};
use crate::inference::{PosteriorStore, COEFF_NAMES};
use crate::marginal::{max_quantile_solve, yearly_params, N_COEFFS};
use crate::rng::{stream_id, stream_rng, StreamRng};

const STREAM_EXCEEDANCE: u32 = 0x4a45_0001;

/// Coefficient vectors of every site for each retained draw, `[draw][site]`.
/// Reads per-site columns (`mu0.s3`) when present, pooled ones otherwise.
pub fn draw_coefficients(store: &PosteriorStore, n_sites: usize) -> Result<Vec<Vec<[f64; N_COEFFS]>>> {
    let mut idx = vec![[0usize; N_COEFFS]; n_sites];
    for (s, row) in idx.iter_mut().enumerate() {
        for (k, name) in COEFF_NAMES.iter().enumerate() {
            row[k] = store
                .index(&format!("{name}.s{s}"))
                .or_else(|| store.index(name))
                .ok_or_else(|| NpmmError::Data(format!("posterior store has no column for {name} at site {s}")))?;
        }
    }
    Ok(store
        .draws
        .iter()
        .map(|d| idx.iter().map(|row| std::array::from_fn(|k| d[row[k]])).collect())
        .collect())
}

pub fn draw_dependence(store: &PosteriorStore) -> Result<Vec<DependenceParams>> {
    let cols = ["beta10", "beta11", "beta20", "beta21", "rho", "r"]
        .map(|c| store.index(c).ok_or_else(|| NpmmError::Data(format!("posterior store has no column {c:?}"))));
    let mut idx = [0usize; 6];
    for (i, c) in cols.into_iter().enumerate() {
        idx[i] = c?;
    }
    Ok(store
        .draws
        .iter()
        .map(|d| DependenceParams::from_array(idx.map(|j| d[j])))
        .collect())
}

/// Per-draw quantiles of the window maximum; `scenarios[0]` is the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub scenarios: Vec<String>,
    pub levels: Vec<f64>,
    pub site_ids: Vec<String>,
    /// `quantiles[scenario][level][site][draw]`.
    pub quantiles: Vec<Vec<Vec<Vec<f64>>>>,
    /// `percent_change[scenario][level][site]`: per-draw change against the
    /// baseline, averaged over draws.
    pub percent_change: Vec<Vec<Vec<f64>>>,
}

/// Quantiles of the maximum over each scenario window for the last `draws`
/// posterior draws, with percent change against `scenarios[0]`.
pub fn project_quantiles(
    store: &PosteriorStore,
    site_ids: &[String],
    scenarios: &[ScenarioCovariates],
    levels: &[f64],
    draws: usize,
) -> Result<ProjectionResult> {
    if scenarios.is_empty() {
        return Err(NpmmError::InvalidArgument("at least the baseline scenario is required".into()));
    }
    if store.len() < draws || draws == 0 {
        return Err(NpmmError::Data(format!(
            "posterior store has {} draws, projection needs {draws}",
            store.len()
        )));
    }
    let n = site_ids.len();
    for sc in scenarios {
        if sc.covs.iter().any(|row| row.len() != n) || sc.covs.is_empty() {
            return Err(NpmmError::Data(format!(
                "scenario {:?} does not cover all {n} sites in every year",
                sc.name
            )));
        }
    }
    let coeffs = draw_coefficients(store, n)?;
    let coeffs = &coeffs[coeffs.len() - draws..];

    let mut quantiles = Vec::with_capacity(scenarios.len());
    for sc in scenarios {
        let per_site: Vec<Vec<Vec<f64>>> = (0..n)
            .into_par_iter()
            .map(|s| {
                let site_covs: Vec<_> = sc.covs.iter().map(|row| row[s]).collect();
                let mut out = vec![Vec::with_capacity(draws); levels.len()];
                for c in coeffs {
                    let yearly = yearly_params(&c[s], &site_covs);
                    for (l, &p) in levels.iter().enumerate() {
                        out[l].push(max_quantile_solve(p, &yearly)?);
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        // [site][level][draw] → [level][site][draw]
        let by_level = (0..levels.len())
            .map(|l| per_site.iter().map(|site| site[l].clone()).collect())
            .collect();
        quantiles.push(by_level);
    }
    let base: &Vec<Vec<Vec<f64>>> = &quantiles[0];
    let percent_change = quantiles
        .iter()
        .map(|sc: &Vec<Vec<Vec<f64>>>| {
            sc.iter()
                .zip(base)
                .map(|(lev, blev)| {
                    lev.iter()
                        .zip(blev)
                        .map(|(q, qb)| {
                            q.iter().zip(qb).map(|(a, b)| 100.0 * (a - b) / b).sum::<f64>() / q.len() as f64
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(ProjectionResult {
        scenarios: scenarios.iter().map(|s| s.name.clone()).collect(),
        levels: levels.to_vec(),
        site_ids: site_ids.to_vec(),
        quantiles,
        percent_change,
    })
}

impl ProjectionResult {
    /// Long-format table of every per-draw quantile.
    pub fn quantiles_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["scenario", "level", "site_id", "draw", "quantile"])?;
        for (i, sc) in self.scenarios.iter().enumerate() {
            for (l, lev) in self.levels.iter().enumerate() {
                for (s, id) in self.site_ids.iter().enumerate() {
                    for (d, q) in self.quantiles[i][l][s].iter().enumerate() {
                        w.write_record([sc.clone(), lev.to_string(), id.clone(), d.to_string(), q.to_string()])?;
                    }
                }
            }
        }
        w.into_inner().map_err(|e| NpmmError::Data(format!("csv buffer: {e}")))
    }

    pub fn summary_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["scenario", "level", "site_id", "mean_quantile", "percent_change"])?;
        for (i, sc) in self.scenarios.iter().enumerate() {
            for (l, lev) in self.levels.iter().enumerate() {
                for (s, id) in self.site_ids.iter().enumerate() {
                    let q = &self.quantiles[i][l][s];
                    w.write_record([
                        sc.clone(),
                        lev.to_string(),
                        id.clone(),
                        crate::stats::mean(q).to_string(),
                        self.percent_change[i][l][s].to_string(),
                    ])?;
                }
            }
        }
        w.into_inner().map_err(|e| NpmmError::Data(format!("csv buffer: {e}")))
    }

    pub fn write(&self, dir: &Path, prefix: &str) -> Result<()> {
        let q = dir.join(format!("{prefix}quantiles.csv"));
        std::fs::write(&q, self.quantiles_csv()?).map_err(|e| NpmmError::io(&q, e))?;
        let s = dir.join(format!("{prefix}summary.csv"));
        std::fs::write(&s, self.summary_csv()?).map_err(|e| NpmmError::io(&s, e))
    }
}

/// Exceedance counts at one level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceSummary {
    pub level: f64,
    pub n_sites: usize,
    /// Mean number of sites above their `level` quantile.
    pub mean: f64,
    pub std_error: f64,
    /// Variance of the count; `n u (1 − u)` under independence.
    pub variance: f64,
    /// Share of replicates with at least two sites above.
    pub p_two_or_more: f64,
    pub replicates: u64,
}

impl ExceedanceSummary {
    /// `n (1 − u)`: the mean count holds at this value for any dependence
    /// when every margin is exact.
    pub fn analytic_mean(&self) -> f64 {
        analytic_exceedance(self.n_sites, self.level)
    }

    pub fn binomial_variance(&self) -> f64 {
        self.n_sites as f64 * self.level * (1.0 - self.level)
    }
}

pub fn analytic_exceedance(n_sites: usize, level: f64) -> f64 {
    n_sites as f64 * (1.0 - level)
}

fn summarise(levels: &[f64], n_sites: usize, counts: &[Vec<u32>]) -> Vec<ExceedanceSummary> {
    levels
        .iter()
        .enumerate()
        .map(|(l, &level)| {
            let c: Vec<f64> = counts.iter().map(|row| row[l] as f64).collect();
            let n = c.len() as f64;
            let mean = crate::stats::mean(&c);
            let variance = if c.len() > 1 { crate::stats::variance(&c) } else { 0.0 };
            ExceedanceSummary {
                level,
                n_sites,
                mean,
                std_error: (variance / n).sqrt(),
                variance,
                p_two_or_more: c.iter().filter(|&&v| v >= 2.0).count() as f64 / n,
                replicates: c.len() as u64,
            }
        })
        .collect()
}

fn count_above(u: &[f64], levels: &[f64]) -> Vec<u32> {
    levels
        .iter()
        .map(|&lev| u.iter().filter(|&&x| x > lev).count() as u32)
        .collect()
}

/// Simulation path of the independence baseline: iid uniform scores.
pub fn independent_exceedance(n_sites: usize, levels: &[f64], replicates: usize, seed: u64) -> Vec<ExceedanceSummary> {
    let mut rng = stream_rng(seed, stream_id(STREAM_EXCEEDANCE, u32::MAX));
    let mut u = vec![0.0; n_sites];
    let counts: Vec<Vec<u32>> = (0..replicates)
        .map(|_| {
            for x in u.iter_mut() {
                *x = rng.random();
            }
            count_above(&u, levels)
        })
        .collect();
    summarise(levels, n_sites, &counts)
}

/// Monte-Carlo exceedance counts under the fitted dependence: for each of
/// the last `draws` posterior draws and every year of the window, region
/// weights follow from the scenario's region series and `replicates`
/// fields are simulated.
#[allow(clippy::too_many_arguments)]
pub fn joint_exceedance(
    store: &PosteriorStore,
    sites: &SiteSet,
    scenario: &ScenarioCovariates,
    levels: &[f64],
    draws: usize,
    replicates: usize,
    rho_r_factor: f64,
    seed: u64,
) -> Result<Vec<ExceedanceSummary>> {
    let deps = draw_dependence(store)?;
    if deps.len() < draws || draws == 0 {
        return Err(NpmmError::Data(format!(
            "posterior store has {} draws, exceedance needs {draws}",
            deps.len()
        )));
    }
    let deps = &deps[deps.len() - draws..];
    let sim = MixtureSimulator::new(sites, rho_r_factor)?;
    let per_draw: Vec<Vec<Vec<u32>>> = deps
        .par_iter()
        .enumerate()
        .map(|(d, p)| {
            p.validate()?;
            let gp = sim.gp_factor(p.rho, p.r)?;
            let mut rng: StreamRng = stream_rng(seed, stream_id(STREAM_EXCEEDANCE, d as u32));
            let mut out = Vec::with_capacity(scenario.n_years() * replicates);
            for t in 0..scenario.n_years() {
                let d1 = delta_link(p.beta10, p.beta11, scenario.z1[t]);
                let d2 = delta_link(p.beta20, p.beta21, scenario.z2[t]);
                for _ in 0..replicates {
                    let (_, u) = sim.replicate(d1, d2, p.rho, p.r, &gp, &mut rng);
                    out.push(count_above(&u, levels));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let counts: Vec<Vec<u32>> = per_draw.into_iter().flatten().collect();
    Ok(summarise(levels, sites.len(), &counts))
}

pub fn write_exceedance_csv(path: &Path, rows: &[(String, ExceedanceSummary)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "scenario",
        "level",
        "n_sites",
        "mean",
        "std_error",
        "analytic_mean",
        "variance",
        "binomial_variance",
        "p_two_or_more",
        "replicates",
    ])?;
    for (name, e) in rows {
        w.write_record([
            name.clone(),
            e.level.to_string(),
            e.n_sites.to_string(),
            e.mean.to_string(),
            e.std_error.to_string(),
            e.analytic_mean().to_string(),
            e.variance.to_string(),
            e.binomial_variance().to_string(),
            e.p_two_or_more.to_string(),
            e.replicates.to_string(),
        ])?;
    }
    w.flush().map_err(|e| NpmmError::io(path, e))
}
