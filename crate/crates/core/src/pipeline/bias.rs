//! Log-linear calibration of climate-model precipitation: on the log scale
//! the model's historical run is matched to the observed sample mean and
//! variance, and the same map is applied to its projections.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::data::{gcm_block, region_annual, Dataset, GcmTable, Standardization};
use crate::error::{NpmmError, Result};
use crate::marginal::N_COVARIATES;
use crate::stats::{mean, std_dev};

/// `a' = m_obs + (a − m_gcm)·s_obs/s_gcm` on the log scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasCorrection {
    pub obs_mean: f64,
    pub obs_sd: f64,
    pub gcm_mean: f64,
    pub gcm_sd: f64,
}

impl BiasCorrection {
    pub fn fit(gcm_log: &[f64], obs_log: &[f64]) -> Result<Self> {
        if gcm_log.len() < 2 || obs_log.len() < 2 {
            return Err(NpmmError::Data(format!(
                "calibration needs at least two values per series, got {} (model) and {} (observed)",
                gcm_log.len(),
                obs_log.len()
            )));
        }
        let gcm_sd = std_dev(gcm_log);
        if !(gcm_sd > 0.0) {
            return Err(NpmmError::Numerical(
                "degenerate calibration: model series has zero variance".into(),
            ));
        }
        Ok(BiasCorrection {
            obs_mean: mean(obs_log),
            obs_sd: std_dev(obs_log),
            gcm_mean: mean(gcm_log),
            gcm_sd,
        })
    }

    #[inline]
    pub fn apply(&self, a: f64) -> f64 {
        self.obs_mean + (a - self.gcm_mean) * self.obs_sd / self.gcm_sd
    }
}

/// Fits the map on the historical pair and corrects `gcm_log`.
pub fn bias_correct(gcm_hist_log: &[f64], obs_hist_log: &[f64], gcm_log: &[f64]) -> Result<Vec<f64>> {
    let c = BiasCorrection::fit(gcm_hist_log, obs_hist_log)?;
    Ok(gcm_log.iter().map(|&a| c.apply(a)).collect())
}

pub fn log_positive(xs: &[f64], what: &str) -> Result<Vec<f64>> {
    xs.iter()
        .map(|&x| {
            if x > 0.0 {
                Ok(x.ln())
            } else {
                Err(NpmmError::Data(format!(
                    "{what}: precipitation must be strictly positive before logging, got {x}"
                )))
            }
        })
        .collect()
}

/// Standardized covariates of one GCM run after correction.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioCovariates {
    pub name: String,
    pub years: Vec<i32>,
    /// `covs[t][s]`, standardized with the fit's constants.
    pub covs: Vec<Vec<[f64; N_COVARIATES]>>,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
}

impl ScenarioCovariates {
    pub fn n_years(&self) -> usize {
        self.years.len()
    }
}

/// One model's calibrated runs.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedModel {
    pub model: String,
    /// `site_maps[s][k]`.
    pub site_maps: Vec<[BiasCorrection; N_COVARIATES]>,
    /// Region-level maps, refitted on the region series.
    pub region_maps: [BiasCorrection; 2],
    pub runs: BTreeMap<String, ScenarioCovariates>,
}

fn column(block: &[Vec<[f64; N_COVARIATES]>], s: usize, k: usize) -> Vec<f64> {
    block.iter().map(|row| row[s][k]).collect()
}

/// Calibrates every run of `model` against the observed covariates over
/// `hist_years`; the run labelled `historical` supplies the model side.
pub fn correct_gcm_model(
    gcm: &GcmTable,
    model: &str,
    historical: &str,
    data: &Dataset,
    hist_years: &[i32],
    windows: &BTreeMap<String, Vec<i32>>,
) -> Result<CorrectedModel> {
    let ids = data.site_ids();
    let obs_idx: Vec<usize> = hist_years
        .iter()
        .map(|y| {
            data.years.iter().position(|v| v == y).ok_or_else(|| {
                NpmmError::Data(format!("historical year {y} is outside the observed window"))
            })
        })
        .collect::<Result<_>>()?;
    let obs_block: Vec<Vec<[f64; N_COVARIATES]>> = obs_idx.iter().map(|&t| data.raw_covs[t].clone()).collect();
    let hist_run = gcm.runs.get(&(model.to_owned(), historical.to_owned())).ok_or_else(|| {
        NpmmError::Data(format!("model {model:?} has no {historical:?} run"))
    })?;
    let gcm_hist = gcm_block(hist_run, &ids, hist_years)?;
    let regions = &data.sites.region;

    let mut site_maps = Vec::with_capacity(ids.len());
    for (s, id) in ids.iter().enumerate() {
        let mut maps = [BiasCorrection { obs_mean: 0.0, obs_sd: 1.0, gcm_mean: 0.0, gcm_sd: 1.0 }; N_COVARIATES];
        for (k, map) in maps.iter_mut().enumerate() {
            let what = format!("site {id}, covariate {k}");
            *map = BiasCorrection::fit(
                &log_positive(&column(&gcm_hist, s, k), &what)?,
                &log_positive(&column(&obs_block, s, k), &what)?,
            )?;
        }
        site_maps.push(maps);
    }
    let obs_z = region_annual(&obs_block, regions);
    let gcm_z = region_annual(&gcm_hist, regions);
    let mut region_maps = [site_maps[0][0]; 2];
    for j in 0..2 {
        if regions.iter().any(|&g| g as usize == j + 1) {
            let what = format!("region {}", j + 1);
            region_maps[j] = BiasCorrection::fit(
                &log_positive(&gcm_z[j], &what)?,
                &log_positive(&obs_z[j], &what)?,
            )?;
        }
    }

    let st: &Standardization = &data.standardization;
    let mut runs = BTreeMap::new();
    for ((m, scen), run) in &gcm.runs {
        if m != model {
            continue;
        }
        let years = windows.get(scen).cloned().unwrap_or_else(|| {
            let mut y: Vec<i32> = run.rows.keys().map(|(_, y)| *y).collect();
            y.sort_unstable();
            y.dedup();
            y
        });
        let raw = gcm_block(run, &ids, &years)?;
        let mut covs = Vec::with_capacity(years.len());
        for row in &raw {
            let mut crow = Vec::with_capacity(ids.len());
            for (s, x) in row.iter().enumerate() {
                let mut c = [0.0; N_COVARIATES];
                for k in 0..N_COVARIATES {
                    let lx = log_positive(&[x[k]], &format!("{m}/{scen} site {}", ids[s]))?[0];
                    c[k] = site_maps[s][k].apply(lx).exp();
                }
                crow.push(st.covariates(&c));
            }
            covs.push(crow);
        }
        let z = region_annual(&raw, regions);
        let mut zs: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for j in 0..2 {
            zs[j] = z[j]
                .iter()
                .map(|&v| {
                    if v > 0.0 {
                        st.region_series(j, region_maps[j].apply(v.ln()).exp())
                    } else {
                        st.region_series(j, 0.0)
                    }
                })
                .collect();
        }
        let [z1, z2] = zs;
        runs.insert(
            scen.clone(),
            ScenarioCovariates {
                name: scen.clone(),
                years,
                covs,
                z1,
                z2,
            },
        );
    }
    Ok(CorrectedModel {
        model: model.to_owned(),
        site_maps,
        region_maps,
        runs,
    })
}
