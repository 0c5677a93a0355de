//! CSV ingestion and the standardization applied before fitting.
//!
//! Schemas (exact headers):
//! `sites.csv` = site_id, lon, lat, region;
//! `obs.csv` = site_id, year, value;
//! `covs.csv` = site_id, year, x_annual, x_jfm, x_amj, x_jas, x_ond;
//! `gcm.csv` = model, scenario, site_id, year, x_annual, x_jfm, x_amj, x_jas, x_ond.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dependence::SiteSet;
use crate::error::{NpmmError, Result};
use crate::inference::FitData;
use crate::marginal::N_COVARIATES;

pub const SITES_HEADER: [&str; 4] = ["site_id", "lon", "lat", "region"];
pub const OBS_HEADER: [&str; 3] = ["site_id", "year", "value"];
pub const COVARIATE_NAMES: [&str; N_COVARIATES] = ["x_annual", "x_jfm", "x_amj", "x_jas", "x_ond"];

fn covs_header() -> Vec<&'static str> {
    let mut h = vec!["site_id", "year"];
    h.extend(COVARIATE_NAMES);
    h
}

fn gcm_header() -> Vec<&'static str> {
    let mut h = vec!["model", "scenario"];
    h.extend(covs_header());
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteRecord {
    pub id: String,
    pub lon: f64,
    pub lat: f64,
    pub region: u8,
}

/// Rows of `obs.csv`: `(site_id, year) → value`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationTable {
    pub rows: BTreeMap<(String, i32), f64>,
}

/// Rows of `covs.csv` (raw, unstandardized).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CovariateTable {
    pub rows: BTreeMap<(String, i32), [f64; N_COVARIATES]>,
}

/// Rows of `gcm.csv`: `(model, scenario) → covariate table`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GcmTable {
    pub runs: BTreeMap<(String, String), CovariateTable>,
}

fn check_header(path: &Path, r: &mut csv::Reader<std::fs::File>, expected: &[&str]) -> Result<()> {
    let got: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_owned()).collect();
    if got != expected {
        return Err(NpmmError::Data(format!(
            "{}: header {:?} does not match the schema {:?}",
            path.display(),
            got,
            expected
        )));
    }
    Ok(())
}

fn field<'a>(path: &Path, row: usize, rec: &'a csv::StringRecord, i: usize, name: &str) -> Result<&'a str> {
    rec.get(i)
        .map(str::trim)
        .ok_or_else(|| NpmmError::Data(format!("{}: row {row}: missing field {name}", path.display())))
}

fn number<T: std::str::FromStr>(path: &Path, row: usize, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let s = field(path, row, rec, i, name)?;
    s.parse().map_err(|_| {
        NpmmError::Data(format!(
            "{}: row {row}: field {name} = {s:?} is not numeric",
            path.display()
        ))
    })
}

fn finite(path: &Path, row: usize, name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(NpmmError::Data(format!("{}: row {row}: field {name} is not finite", path.display())))
    }
}

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let f = std::fs::File::open(path).map_err(|e| NpmmError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(f))
}

pub fn read_sites(path: &Path) -> Result<Vec<SiteRecord>> {
    let mut r = open(path)?;
    check_header(path, &mut r, &SITES_HEADER)?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        let id = field(path, row, &rec, 0, "site_id")?.to_owned();
        if !seen.insert(id.clone()) {
            return Err(NpmmError::Data(format!("{}: row {row}: duplicate site_id {id:?}", path.display())));
        }
        let lon = finite(path, row, "lon", number(path, row, &rec, 1, "lon")?)?;
        let lat = finite(path, row, "lat", number(path, row, &rec, 2, "lat")?)?;
        let region: u8 = number(path, row, &rec, 3, "region")?;
        if region != 1 && region != 2 {
            return Err(NpmmError::Data(format!(
                "{}: row {row}: region must be 1 or 2, got {region}",
                path.display()
            )));
        }
        out.push(SiteRecord { id, lon, lat, region });
    }
    if out.is_empty() {
        return Err(NpmmError::Data(format!("{}: no sites", path.display())));
    }
    Ok(out)
}

pub fn read_observations(path: &Path) -> Result<ObservationTable> {
    let mut r = open(path)?;
    check_header(path, &mut r, &OBS_HEADER)?;
    let mut t = ObservationTable::default();
    for (i, rec) in r.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        let id = field(path, row, &rec, 0, "site_id")?.to_owned();
        let year: i32 = number(path, row, &rec, 1, "year")?;
        let v = finite(path, row, "value", number(path, row, &rec, 2, "value")?)?;
        if t.rows.insert((id.clone(), year), v).is_some() {
            return Err(NpmmError::Data(format!(
                "{}: row {row}: duplicate observation for site {id:?}, year {year}",
                path.display()
            )));
        }
    }
    Ok(t)
}

fn read_cov_fields(path: &Path, row: usize, rec: &csv::StringRecord, offset: usize) -> Result<[f64; N_COVARIATES]> {
    let mut x = [0.0; N_COVARIATES];
    for (k, name) in COVARIATE_NAMES.iter().enumerate() {
        x[k] = finite(path, row, name, number(path, row, rec, offset + k, name)?)?;
    }
    Ok(x)
}

pub fn read_covariates(path: &Path) -> Result<CovariateTable> {
    let mut r = open(path)?;
    check_header(path, &mut r, &covs_header())?;
    let mut t = CovariateTable::default();
    for (i, rec) in r.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        let id = field(path, row, &rec, 0, "site_id")?.to_owned();
        let year: i32 = number(path, row, &rec, 1, "year")?;
        let x = read_cov_fields(path, row, &rec, 2)?;
        if t.rows.insert((id.clone(), year), x).is_some() {
            return Err(NpmmError::Data(format!(
                "{}: row {row}: duplicate covariates for site {id:?}, year {year}",
                path.display()
            )));
        }
    }
    Ok(t)
}

pub fn read_gcm(path: &Path) -> Result<GcmTable> {
    let mut r = open(path)?;
    check_header(path, &mut r, &gcm_header())?;
    let mut t = GcmTable::default();
    for (i, rec) in r.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        let model = field(path, row, &rec, 0, "model")?.to_owned();
        let scenario = field(path, row, &rec, 1, "scenario")?.to_owned();
        let id = field(path, row, &rec, 2, "site_id")?.to_owned();
        let year: i32 = number(path, row, &rec, 3, "year")?;
        let x = read_cov_fields(path, row, &rec, 4)?;
        let run = t.runs.entry((model.clone(), scenario.clone())).or_default();
        if run.rows.insert((id.clone(), year), x).is_some() {
            return Err(NpmmError::Data(format!(
                "{}: row {row}: duplicate record for model {model:?}, scenario {scenario:?}, site {id:?}, year {year}",
                path.display()
            )));
        }
    }
    Ok(t)
}

pub fn write_sites(path: &Path, sites: &[SiteRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SITES_HEADER)?;
    for s in sites {
        w.write_record([s.id.clone(), s.lon.to_string(), s.lat.to_string(), s.region.to_string()])?;
    }
    w.flush().map_err(|e| NpmmError::io(path, e))
}

pub fn write_observations(path: &Path, t: &ObservationTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(OBS_HEADER)?;
    for ((id, year), v) in &t.rows {
        w.write_record([id.clone(), year.to_string(), v.to_string()])?;
    }
    w.flush().map_err(|e| NpmmError::io(path, e))
}

fn cov_record(prefix: &[String], x: &[f64; N_COVARIATES]) -> Vec<String> {
    let mut r = prefix.to_vec();
    r.extend(x.iter().map(|v| v.to_string()));
    r
}

pub fn write_covariates(path: &Path, t: &CovariateTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(covs_header())?;
    for ((id, year), x) in &t.rows {
        w.write_record(cov_record(&[id.clone(), year.to_string()], x))?;
    }
    w.flush().map_err(|e| NpmmError::io(path, e))
}

pub fn write_gcm(path: &Path, t: &GcmTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(gcm_header())?;
    for ((model, scen), run) in &t.runs {
        for ((id, year), x) in &run.rows {
            w.write_record(cov_record(&[model.clone(), scen.clone(), id.clone(), year.to_string()], x))?;
        }
    }
    w.flush().map_err(|e| NpmmError::io(path, e))
}

/// Affine maps from raw inputs to the scales the model sees; persisted
/// with a fit so projections reuse them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    /// Lower-left corner of the site bounding box.
    pub coord_origin: [f64; 2],
    /// Common divisor for both coordinate axes.
    pub coord_span: f64,
    /// When false, covariates pass through unchanged.
    pub scale_covariates: bool,
    pub cov_min: [f64; N_COVARIATES],
    pub cov_max: [f64; N_COVARIATES],
    /// Range of each region's annual series `Z_j`.
    pub z_min: [f64; 2],
    pub z_max: [f64; 2],
}

fn unit(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.0
    }
}

impl Standardization {
    pub fn covariates(&self, x: &[f64; N_COVARIATES]) -> [f64; N_COVARIATES] {
        if !self.scale_covariates {
            return *x;
        }
        std::array::from_fn(|k| unit(x[k], self.cov_min[k], self.cov_max[k]))
    }

    pub fn region_series(&self, region: usize, z: f64) -> f64 {
        if !self.scale_covariates {
            return z;
        }
        unit(z, self.z_min[region], self.z_max[region])
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self).map_err(|e| NpmmError::Serde(e.to_string()))?;
        std::fs::write(path, s).map_err(|e| NpmmError::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| NpmmError::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| NpmmError::Serde(e.to_string()))
    }
}

/// Maps raw coordinates into the unit square, keeping the aspect ratio.
pub fn scale_sites(records: &[SiteRecord]) -> Result<(SiteSet, [f64; 2], f64)> {
    let fold = |f: fn(f64, f64) -> f64, init: f64, get: fn(&SiteRecord) -> f64| {
        records.iter().map(get).fold(init, f)
    };
    let lon0 = fold(f64::min, f64::INFINITY, |s| s.lon);
    let lat0 = fold(f64::min, f64::INFINITY, |s| s.lat);
    let lon1 = fold(f64::max, f64::NEG_INFINITY, |s| s.lon);
    let lat1 = fold(f64::max, f64::NEG_INFINITY, |s| s.lat);
    let span = (lon1 - lon0).max(lat1 - lat0);
    let span = if span > 0.0 { span } else { 1.0 };
    let coords = records
        .iter()
        .map(|s| [((s.lon - lon0) / span).clamp(0.0, 1.0), ((s.lat - lat0) / span).clamp(0.0, 1.0)])
        .collect();
    let region = records.iter().map(|s| s.region).collect();
    Ok((SiteSet::new(coords, region)?, [lon0, lat0], span))
}

/// Region annual series: mean of `x_annual` over the region's sites, per year.
pub fn region_annual(raw: &[Vec<[f64; N_COVARIATES]>], regions: &[u8]) -> [Vec<f64>; 2] {
    std::array::from_fn(|j| {
        let label = j as u8 + 1;
        raw.iter()
            .map(|row| {
                let v: Vec<f64> = row
                    .iter()
                    .zip(regions)
                    .filter(|(_, &g)| g == label)
                    .map(|(x, _)| x[0])
                    .collect();
                if v.is_empty() {
                    0.0
                } else {
                    crate::stats::mean(&v)
                }
            })
            .collect()
    })
}

/// Sites, observations and covariates aligned on a common year window.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub site_records: Vec<SiteRecord>,
    pub sites: SiteSet,
    pub years: Vec<i32>,
    /// `y[t][s]`.
    pub y: Vec<Vec<f64>>,
    /// `raw_covs[t][s]`, as read.
    pub raw_covs: Vec<Vec<[f64; N_COVARIATES]>>,
    pub standardization: Standardization,
}

fn year_window(path_desc: &str, obs: &ObservationTable, ids: &[String]) -> Result<Vec<i32>> {
    let years: BTreeSet<i32> = obs.rows.keys().map(|(_, y)| *y).collect();
    let (Some(&first), Some(&last)) = (years.first(), years.last()) else {
        return Err(NpmmError::Data(format!("{path_desc}: no observations")));
    };
    let known: BTreeSet<&String> = ids.iter().collect();
    if let Some((id, y)) = obs.rows.keys().find(|(id, _)| !known.contains(id)) {
        return Err(NpmmError::Data(format!(
            "{path_desc}: observation for unknown site {id:?} in year {y}"
        )));
    }
    for id in ids {
        for y in first..=last {
            if !obs.rows.contains_key(&(id.clone(), y)) {
                return Err(NpmmError::Data(format!(
                    "{path_desc}: missing observation for site {id:?}, year {y} (window {first}-{last})"
                )));
            }
        }
    }
    Ok((first..=last).collect())
}

/// Reads and validates the three input tables; standardization constants
/// are computed from the fit window.
pub fn load_data(sites: &Path, obs: &Path, covs: &Path, scale_covariates: bool) -> Result<Dataset> {
    let records = read_sites(sites)?;
    let obs_t = read_observations(obs)?;
    let cov_t = read_covariates(covs)?;
    let ids: Vec<String> = records.iter().map(|s| s.id.clone()).collect();
    let years = year_window(&obs.display().to_string(), &obs_t, &ids)?;
    let mut y = Vec::with_capacity(years.len());
    let mut raw = Vec::with_capacity(years.len());
    for &yr in &years {
        let mut yrow = Vec::with_capacity(ids.len());
        let mut crow = Vec::with_capacity(ids.len());
        for id in &ids {
            yrow.push(obs_t.rows[&(id.clone(), yr)]);
            let x = cov_t.rows.get(&(id.clone(), yr)).ok_or_else(|| {
                NpmmError::Data(format!(
                    "{}: missing covariates for site {id:?}, year {yr}",
                    covs.display()
                ))
            })?;
            crow.push(*x);
        }
        y.push(yrow);
        raw.push(crow);
    }
    let (site_set, origin, span) = scale_sites(&records)?;
    let standardization = fit_standardization(&raw, &site_set.region, origin, span, scale_covariates);
    Ok(Dataset {
        site_records: records,
        sites: site_set,
        years,
        y,
        raw_covs: raw,
        standardization,
    })
}

pub fn fit_standardization(
    raw: &[Vec<[f64; N_COVARIATES]>],
    regions: &[u8],
    origin: [f64; 2],
    span: f64,
    scale_covariates: bool,
) -> Standardization {
    let mut cov_min = [f64::INFINITY; N_COVARIATES];
    let mut cov_max = [f64::NEG_INFINITY; N_COVARIATES];
    for row in raw {
        for x in row {
            for k in 0..N_COVARIATES {
                cov_min[k] = cov_min[k].min(x[k]);
                cov_max[k] = cov_max[k].max(x[k]);
            }
        }
    }
    let z = region_annual(raw, regions);
    let range = |v: &[f64]| {
        v.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
    };
    let (z1, z2) = (range(&z[0]), range(&z[1]));
    Standardization {
        coord_origin: origin,
        coord_span: span,
        scale_covariates,
        cov_min,
        cov_max,
        z_min: [z1.0, z2.0],
        z_max: [z1.1, z2.1],
    }
}

/// Standardized covariates and region series for a raw covariate block.
pub fn standardize_block(
    raw: &[Vec<[f64; N_COVARIATES]>],
    regions: &[u8],
    st: &Standardization,
) -> (Vec<Vec<[f64; N_COVARIATES]>>, Vec<f64>, Vec<f64>) {
    let covs = raw
        .iter()
        .map(|row| row.iter().map(|x| st.covariates(x)).collect())
        .collect();
    let [z1, z2] = region_annual(raw, regions);
    let z1 = z1.iter().map(|&v| st.region_series(0, v)).collect();
    let z2 = z2.iter().map(|&v| st.region_series(1, v)).collect();
    (covs, z1, z2)
}

impl Dataset {
    pub fn site_ids(&self) -> Vec<String> {
        self.site_records.iter().map(|s| s.id.clone()).collect()
    }

    pub fn to_fit_data(&self) -> FitData {
        let (covs, z1, z2) = standardize_block(&self.raw_covs, &self.sites.region, &self.standardization);
        FitData {
            sites: self.sites.clone(),
            years: self.years.clone(),
            y: self.y.clone(),
            covs,
            z1,
            z2,
        }
    }

    pub fn observation_table(&self) -> ObservationTable {
        let ids = self.site_ids();
        let mut t = ObservationTable::default();
        for (ti, &yr) in self.years.iter().enumerate() {
            for (s, id) in ids.iter().enumerate() {
                t.rows.insert((id.clone(), yr), self.y[ti][s]);
            }
        }
        t
    }

    pub fn covariate_table(&self) -> CovariateTable {
        let ids = self.site_ids();
        let mut t = CovariateTable::default();
        for (ti, &yr) in self.years.iter().enumerate() {
            for (s, id) in ids.iter().enumerate() {
                t.rows.insert((id.clone(), yr), self.raw_covs[ti][s]);
            }
        }
        t
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| NpmmError::io(dir, e))?;
        write_sites(&dir.join("sites.csv"), &self.site_records)?;
        write_observations(&dir.join("obs.csv"), &self.observation_table())?;
        write_covariates(&dir.join("covs.csv"), &self.covariate_table())
    }
}

/// Covariates of one GCM run arranged as `raw[t][s]` over `years`.
pub fn gcm_block(run: &CovariateTable, ids: &[String], years: &[i32]) -> Result<Vec<Vec<[f64; N_COVARIATES]>>> {
    let index: HashMap<(&str, i32), &[f64; N_COVARIATES]> =
        run.rows.iter().map(|((id, y), x)| ((id.as_str(), *y), x)).collect();
    years
        .iter()
        .map(|&y| {
            ids.iter()
                .map(|id| {
                    index.get(&(id.as_str(), y)).map(|x| **x).ok_or_else(|| {
                        NpmmError::Data(format!("GCM run is missing site {id:?}, year {y}"))
                    })
                })
                .collect()
        })
        .collect()
}
