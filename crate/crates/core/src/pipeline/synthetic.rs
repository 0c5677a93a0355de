//! Data generated from the forward model: the three simulation-study
//! scenarios and a precipitation-driven fixture with climate-model runs.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::data::{
    fit_standardization, scale_sites, standardize_block, CovariateTable, Dataset, GcmTable, SiteRecord,
};
use crate::dependence::{mixture_sample, DeltaField, DependenceParams, SiteSet};
use crate::error::{NpmmError, Result};
use crate::inference::FitData;
use crate::marginal::{linear_location, GevParams, N_COEFFS, N_COVARIATES};

/// Spatial share used when a scenario does not fix it.
pub const DEFAULT_R: f64 = 0.88;
pub const FIRST_YEAR: i32 = 1972;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTruth {
    pub id: u8,
    /// `[mu0, mu1, 0, 0, 0, 0, sigma, xi]`.
    pub coeffs: [f64; N_COEFFS],
    pub dep: DependenceParams,
}

/// Parameters of simulation scenario 1, 2 or 3 with spatial share `r`.
pub fn scenario(id: u8, r: f64) -> Result<ScenarioTruth> {
    let (mu0, mu1, sigma, xi, rho, b10, b11, b20, b21) = match id {
        1 => (12.0, 3.0, 2.0, 0.2, 0.4, -1.0, 1.8, 0.2, 2.0),
        2 => (13.0, 5.0, 2.0, 0.1, 0.1, 1.0, -1.2, -1.0, 0.8),
        3 => (12.0, 3.0, 3.0, -0.1, 0.2, -1.5, 2.0, -1.5, 0.8),
        _ => {
            return Err(NpmmError::InvalidArgument(format!(
                "scenario must be 1, 2 or 3, got {id}"
            )))
        }
    };
    let dep = DependenceParams {
        beta10: b10,
        beta11: b11,
        beta20: b20,
        beta21: b21,
        rho,
        r,
    };
    dep.validate()?;
    Ok(ScenarioTruth {
        id,
        coeffs: [mu0, mu1, 0.0, 0.0, 0.0, 0.0, sigma, xi],
        dep,
    })
}

/// `Z_1t = (t − t̄)/10` and `Z_2t = Z_1t − 0.05` for consecutive years.
pub fn scenario_covariates(years: &[i32]) -> (Vec<f64>, Vec<f64>) {
    let tbar = years.iter().map(|&y| y as f64).sum::<f64>() / years.len() as f64;
    let z1: Vec<f64> = years.iter().map(|&y| (y as f64 - tbar) / 10.0).collect();
    let z2 = z1.iter().map(|z| z - 0.05).collect();
    (z1, z2)
}

/// Uniform sites on the unit square; the southern half is region 2.
pub fn random_sites<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<SiteSet> {
    let coords: Vec<[f64; 2]> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
    let region = coords.iter().map(|c| if c[1] < 0.5 { 2 } else { 1 }).collect();
    SiteSet::new(coords, region)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub fit: FitData,
    pub truth: ScenarioTruth,
    /// `u[t][s]`: the copula scores behind `y`.
    pub u: Vec<Vec<f64>>,
}

/// `T` years of scenario data at fixed sites; every site carries the
/// covariate `Z_1t` in its first slot.
pub fn make_synthetic_at<R: Rng + ?Sized>(
    sites: &SiteSet,
    truth: &ScenarioTruth,
    t_years: usize,
    rho_r_factor: f64,
    rng: &mut R,
) -> Result<SyntheticData> {
    if t_years == 0 {
        return Err(NpmmError::InvalidArgument("at least one year is required".into()));
    }
    let years: Vec<i32> = (0..t_years as i32).map(|t| FIRST_YEAR + t).collect();
    let (z1, z2) = scenario_covariates(&years);
    let deltas = DeltaField::from_link(&truth.dep, &z1, &z2);
    let real = mixture_sample(sites, &deltas, &truth.dep, rho_r_factor, t_years, rng)?;
    let n = sites.len();
    let mut covs = Vec::with_capacity(t_years);
    let mut y = Vec::with_capacity(t_years);
    for t in 0..t_years {
        let x = [z1[t], 0.0, 0.0, 0.0, 0.0];
        covs.push(vec![x; n]);
        let p = GevParams {
            mu: linear_location(&truth.coeffs, &x),
            sigma: truth.coeffs[6],
            xi: truth.coeffs[7],
        };
        y.push(real.u[t].iter().map(|&u| p.quantile_unchecked(u)).collect());
    }
    Ok(SyntheticData {
        fit: FitData {
            sites: sites.clone(),
            years,
            y,
            covs,
            z1,
            z2,
        },
        truth: *truth,
        u: real.u,
    })
}

/// Scenario data on freshly drawn sites.
pub fn make_synthetic<R: Rng + ?Sized>(
    scenario_id: u8,
    n_sites: usize,
    t_years: usize,
    r: f64,
    rho_r_factor: f64,
    rng: &mut R,
) -> Result<SyntheticData> {
    let truth = scenario(scenario_id, r)?;
    let sites = random_sites(n_sites, rng)?;
    make_synthetic_at(&sites, &truth, t_years, rho_r_factor, rng)
}

fn site_records(sites: &SiteSet) -> Vec<SiteRecord> {
    sites
        .coords
        .iter()
        .zip(&sites.region)
        .enumerate()
        .map(|(i, (c, &g))| SiteRecord {
            id: format!("S{i:03}"),
            lon: c[0],
            lat: c[1],
            region: g,
        })
        .collect()
}

impl SyntheticData {
    /// Table form for writing; the region series are implied by `x_annual`
    /// and covariates are kept on their generating scale.
    pub fn to_dataset(&self) -> Result<Dataset> {
        let records = site_records(&self.fit.sites);
        let (sites, origin, span) = scale_sites(&records)?;
        let st = fit_standardization(&self.fit.covs, &sites.region, origin, span, false);
        Ok(Dataset {
            site_records: records,
            sites,
            years: self.fit.years.clone(),
            y: self.fit.y.clone(),
            raw_covs: self.fit.covs.clone(),
            standardization: st,
        })
    }
}

/// Precipitation-driven dataset with climate-model runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ClimateFixture {
    pub data: Dataset,
    pub gcm: GcmTable,
    /// Coefficients used for every site, on the standardized covariate scale.
    pub coeffs: [f64; N_COEFFS],
    pub dep: DependenceParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClimateSpec {
    pub n_sites: usize,
    pub first_year: i32,
    pub last_year: i32,
    pub historical: (i32, i32),
    pub future: (i32, i32),
    pub models: Vec<String>,
    pub future_scenarios: Vec<String>,
}

impl Default for ClimateSpec {
    fn default() -> Self {
        ClimateSpec {
            n_sites: 12,
            first_year: 1972,
            last_year: 2021,
            historical: (1972, 2005),
            future: (2006, 2035),
            models: vec!["wet-model".into(), "dry-model".into()],
            future_scenarios: vec!["rcp45".into(), "rcp85".into()],
        }
    }
}

fn precip<R: Rng + ?Sized>(base: &[f64; N_COVARIATES], shift: f64, spread: f64, rng: &mut R) -> [f64; N_COVARIATES] {
    std::array::from_fn(|k| (base[k] + shift + spread * rng.sample::<f64, _>(StandardNormal)).exp())
}

/// Lognormal seasonal and annual precipitation per site, annual maxima from
/// the forward model, and for each climate model a biased historical run
/// plus future runs whose log precipitation is shifted per scenario.
pub fn make_climate_fixture<R: Rng + ?Sized>(spec: &ClimateSpec, rng: &mut R) -> Result<ClimateFixture> {
    if spec.last_year < spec.first_year || spec.n_sites == 0 {
        return Err(NpmmError::InvalidArgument("empty climate fixture".into()));
    }
    let sites = random_sites(spec.n_sites, rng)?;
    let records = site_records(&sites);
    let base: Vec<[f64; N_COVARIATES]> = (0..spec.n_sites)
        .map(|_| {
            let a = 6.6 + 0.2 * rng.sample::<f64, _>(StandardNormal);
            [a, a - 1.4, a - 1.2, a - 1.3, a - 1.5]
        })
        .collect();
    let years: Vec<i32> = (spec.first_year..=spec.last_year).collect();
    let raw: Vec<Vec<[f64; N_COVARIATES]>> = years
        .iter()
        .map(|_| base.iter().map(|b| precip(b, 0.0, 0.12, rng)).collect())
        .collect();
    let (scaled, origin, span) = scale_sites(&records)?;
    let st = fit_standardization(&raw, &scaled.region, origin, span, true);
    let (covs, z1, z2) = standardize_block(&raw, &scaled.region, &st);
    let coeffs = [40.0, 6.0, 2.0, 8.0, 3.0, 2.0, 8.0, 0.1];
    let dep = DependenceParams {
        beta10: -0.5,
        beta11: 1.0,
        beta20: 0.5,
        beta21: 1.0,
        rho: 0.2,
        r: DEFAULT_R,
    };
    let deltas = DeltaField::from_link(&dep, &z1, &z2);
    let real = mixture_sample(&scaled, &deltas, &dep, crate::dependence::RHO_R_FACTOR, years.len(), rng)?;
    let y = covs
        .iter()
        .zip(&real.u)
        .map(|(crow, urow)| {
            crow.iter()
                .zip(urow)
                .map(|(x, &u)| {
                    GevParams {
                        mu: linear_location(&coeffs, x),
                        sigma: coeffs[6],
                        xi: coeffs[7],
                    }
                    .quantile_unchecked(u)
                })
                .collect()
        })
        .collect();
    let data = Dataset {
        site_records: records,
        sites: scaled,
        years,
        y,
        raw_covs: raw,
        standardization: st,
    };

    let mut gcm = GcmTable::default();
    for (mi, model) in spec.models.iter().enumerate() {
        // model bias: shifted and over-dispersed log precipitation
        let bias = 0.15 * (mi as f64 + 1.0);
        let wet = if mi % 2 == 0 { 1.0 } else { -1.0 };
        let mut hist = CovariateTable::default();
        for yr in spec.historical.0..=spec.historical.1 {
            for (s, rec) in data.site_records.iter().enumerate() {
                hist.rows.insert((rec.id.clone(), yr), precip(&base[s], bias, 0.18, rng));
            }
        }
        gcm.runs.insert((model.clone(), "historical".into()), hist);
        for (si, scen) in spec.future_scenarios.iter().enumerate() {
            let change = wet * 0.03 * (si as f64 + 1.0);
            let mut fut = CovariateTable::default();
            for yr in spec.future.0..=spec.future.1 {
                for (s, rec) in data.site_records.iter().enumerate() {
                    fut.rows.insert((rec.id.clone(), yr), precip(&base[s], bias + change, 0.18, rng));
                }
            }
            gcm.runs.insert((model.clone(), scen.clone()), fut);
        }
    }
    Ok(ClimateFixture { data, gcm, coeffs, dep })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{fit_gev_mle, PriorSpec};
    use crate::rng::stream_rng;

    #[test]
    fn scenario_one_matches_table() {
        let s = scenario(1, DEFAULT_R).unwrap();
        assert_eq!(s.coeffs, [12.0, 3.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.2]);
        assert_eq!(s.dep.to_array(), [-1.0, 1.8, 0.2, 2.0, 0.4, 0.88]);
        assert!(scenario(4, 0.5).is_err());
    }

    #[test]
    fn region_covariates_centre_on_mean_year() {
        let years: Vec<i32> = (1972..2022).collect();
        let (z1, z2) = scenario_covariates(&years);
        assert!(crate::stats::mean(&z1).abs() < 1e-12);
        assert!((z1[0] + 2.45).abs() < 1e-12);
        assert!((z2[10] - (z1[10] - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn seeds_reproduce_bit_exactly() {
        let a = make_synthetic(1, 6, 10, DEFAULT_R, 0.19, &mut stream_rng(11, 0)).unwrap();
        let b = make_synthetic(1, 6, 10, DEFAULT_R, 0.19, &mut stream_rng(11, 0)).unwrap();
        assert_eq!(a, b);
        let c = make_synthetic(1, 6, 10, DEFAULT_R, 0.19, &mut stream_rng(12, 0)).unwrap();
        assert_ne!(a.fit.y, c.fit.y);
    }

    #[test]
    fn site_mle_recovers_intercept_at_long_record() {
        let d = make_synthetic(1, 3, 200, DEFAULT_R, 0.19, &mut stream_rng(5, 0)).unwrap();
        let active = [true, true, false, false, false, false, true, true];
        for s in 0..3 {
            let y: Vec<f64> = d.fit.y.iter().map(|r| r[s]).collect();
            let x: Vec<[f64; N_COVARIATES]> = d.fit.covs.iter().map(|r| r[s]).collect();
            let m = fit_gev_mle(&y, &x, active, &PriorSpec::default()).unwrap();
            let se = m.std_errors.as_ref().unwrap()[0];
            assert!((m.coeffs[0] - 12.0).abs() < 4.0 * se, "site {s}: {} ± {se}", m.coeffs[0]);
        }
    }

    #[test]
    fn climate_fixture_is_well_formed() {
        let f = make_climate_fixture(&ClimateSpec::default(), &mut stream_rng(3, 0)).unwrap();
        f.data.to_fit_data().validate().unwrap();
        assert_eq!(f.gcm.runs.len(), 6);
        let dir = tempfile::tempdir().unwrap();
        f.data.write(dir.path()).unwrap();
        super::super::data::write_gcm(&dir.path().join("gcm.csv"), &f.gcm).unwrap();
        let back = super::super::data::read_gcm(&dir.path().join("gcm.csv")).unwrap();
        assert_eq!(back, f.gcm);
    }
}
