//! The six workflow steps behind the command-line tool. Each writes its
//! outputs under a run directory together with `manifest.json` and a copy
//! of the effective configuration.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::bias::correct_gcm_model;
use super::config::{Config, Scale};
use super::data::{load_data, read_gcm, read_sites, scale_sites, write_gcm, Dataset};
use super::projection::{joint_exceedance, project_quantiles, write_exceedance_csv, ExceedanceSummary};
use super::synthetic::{make_climate_fixture, make_synthetic, ClimateSpec};
use crate::error::{NpmmError, Result};
use crate::inference::{run_chain, FactorModel, PosteriorStore, RunManifest};
use crate::rng::{stream_id, stream_rng};
use crate::spqr::{
    generate_for_position, pit_diagnostic, read_checkpoint, train_for_position, variable_importance, write_checkpoint,
    SurrogateModel, TrainingSet,
};
use crate::stats::{ks_statistic, mean, sample_quantile, split_rhat, std_dev};
use crate::tail::chi_u_empirical;
use crate::vecchia::build_structure;

const STREAM_SIMULATE: u32 = 0x434c_0001;
const STREAM_FIT: u32 = 0x434c_0002;
const STREAM_DIAGNOSE: u32 = 0x434c_0003;
const TRAINING_MAGIC: &str = "NPMM-TRAINING 1";

/// Shared inputs of every command.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub config: Config,
    pub seed: u64,
    pub scale: Scale,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandManifest {
    pub command: String,
    pub seed: u64,
    pub scale: Scale,
    pub config_hash: String,
    /// Input path → SHA-256 of its contents (directories are not hashed).
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub details: serde_json::Value,
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| NpmmError::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| NpmmError::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> NpmmError + '_ {
    move |e| NpmmError::io(path, e)
}

impl RunContext {
    fn prepare(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out).map_err(io_err(&self.out))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn finish(&self, command: &str, inputs: &[&Path], outputs: &[&str], details: serde_json::Value) -> Result<()> {
        let mut hashes = BTreeMap::new();
        for p in inputs {
            let h = if p.is_file() { file_sha256(p)? } else { "directory".into() };
            hashes.insert(p.display().to_string(), h);
        }
        let manifest = CommandManifest {
            command: command.into(),
            seed: self.seed,
            scale: self.scale,
            config_hash: self.config.hash()?,
            inputs: hashes,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            details,
        };
        let cfg = self.path("config.toml");
        std::fs::write(&cfg, self.config.to_toml()?).map_err(io_err(&cfg))?;
        let m = self.path("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| NpmmError::Serde(e.to_string()))?;
        std::fs::write(&m, text).map_err(io_err(&m))
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| NpmmError::Serde(e.to_string()))
}

/// Writes a synthetic dataset: scenario 1-3 from the simulation study, or
/// the precipitation fixture (with `gcm.csv`) for scenario 0.
pub fn simulate(ctx: &RunContext) -> Result<()> {
    ctx.prepare()?;
    let m = &ctx.config.model;
    let mut rng = stream_rng(ctx.seed, stream_id(STREAM_SIMULATE, 0));
    if m.scenario == 0 {
        let p = &ctx.config.projection;
        let spec = ClimateSpec {
            n_sites: m.sites,
            first_year: p.historical.0,
            last_year: p.historical.0 + m.years as i32 - 1,
            historical: p.historical,
            future: p.future,
            future_scenarios: vec!["rcp45".into(), "rcp85".into()],
            models: vec!["wet-model".into(), "dry-model".into()],
        };
        let f = make_climate_fixture(&spec, &mut rng)?;
        f.data.write(&ctx.out)?;
        write_gcm(&ctx.path("gcm.csv"), &f.gcm)?;
        let details = serde_json::json!({
            "coefficients": f.coeffs,
            "dependence": to_json(&f.dep)?,
            "climate": to_json(&spec)?,
        });
        ctx.finish("simulate", &[], &["sites.csv", "obs.csv", "covs.csv", "gcm.csv"], details)
    } else {
        let d = make_synthetic(m.scenario, m.sites, m.years, m.r, m.rho_r_factor, &mut rng)?;
        d.to_dataset()?.write(&ctx.out)?;
        let details = serde_json::json!({
            "truth": to_json(&d.truth)?,
            "note": "covariates are written on their generating scale; fit with model.standardize_covariates = false to estimate the listed truth",
        });
        ctx.finish("simulate", &[], &["sites.csv", "obs.csv", "covs.csv"], details)
    }
}

fn structure_for(ctx: &RunContext, sites_path: &Path) -> Result<(crate::dependence::SiteSet, crate::vecchia::VecchiaStructure)> {
    let (sites, _, _) = scale_sites(&read_sites(sites_path)?)?;
    let structure = build_structure(&sites, ctx.config.model.neighbors)?;
    Ok((sites, structure))
}

pub fn write_training_set(path: &Path, set: &TrainingSet, structure_hash: &str) -> Result<()> {
    let io = io_err(path);
    let mut w = BufWriter::new(File::create(path).map_err(&io)?);
    let header = serde_json::json!({
        "position": set.position,
        "rows": set.len(),
        "cols": set.inputs.ncols(),
        "structure_hash": structure_hash,
    });
    writeln!(w, "{TRAINING_MAGIC}").map_err(&io)?;
    writeln!(w, "{header}").map_err(&io)?;
    for v in set.inputs.iter().chain(&set.response).chain(set.theta.iter().flatten()) {
        w.write_all(&v.to_le_bytes()).map_err(&io)?;
    }
    w.flush().map_err(&io)
}

pub fn read_training_set(path: &Path) -> Result<(TrainingSet, String)> {
    let io = io_err(path);
    let mut r = BufReader::new(File::open(path).map_err(&io)?);
    let mut line = String::new();
    r.read_line(&mut line).map_err(&io)?;
    if line.trim_end() != TRAINING_MAGIC {
        return Err(NpmmError::Data(format!("{}: not a training set", path.display())));
    }
    line.clear();
    r.read_line(&mut line).map_err(&io)?;
    let h: serde_json::Value = serde_json::from_str(&line).map_err(|e| NpmmError::Serde(e.to_string()))?;
    let get = |k: &str| {
        h[k].as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| NpmmError::Data(format!("{}: header lacks {k}", path.display())))
    };
    let (position, rows, cols) = (get("position")?, get("rows")?, get("cols")?);
    let hash = h["structure_hash"].as_str().unwrap_or_default().to_owned();
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(&io)?;
    let need = rows * (cols + 1 + 4) * 8;
    if bytes.len() != need {
        return Err(NpmmError::Data(format!(
            "{}: payload has {} bytes, header implies {need}",
            path.display(),
            bytes.len()
        )));
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let (x, rest) = vals.split_at(rows * cols);
    let (resp, theta) = rest.split_at(rows);
    let inputs = Array2::from_shape_vec((rows, cols), x.to_vec())
        .map_err(|e| NpmmError::Data(format!("{}: {e}", path.display())))?;
    let theta = theta.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect();
    Ok((
        TrainingSet {
            position,
            inputs,
            response: resp.to_vec(),
            theta,
        },
        hash,
    ))
}

/// Simulates training rows for every ordered position into `out/training/`.
pub fn make_training(ctx: &RunContext, sites_path: &Path) -> Result<()> {
    ctx.prepare()?;
    let (sites, structure) = structure_for(ctx, sites_path)?;
    let dir = ctx.path("training");
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let rows = ctx.config.surrogate.rows(ctx.scale);
    let hash = structure.hash();
    let mut outputs = Vec::new();
    for pos in 1..structure.n_sites() {
        let set = generate_for_position(pos, &structure, &sites, &ctx.config.surrogate.design, rows, ctx.seed)?;
        let name = format!("training/pos_{pos:03}.bin");
        write_training_set(&ctx.path(&name), &set, &hash)?;
        outputs.push(name);
    }
    let details = serde_json::json!({ "rows": rows, "structure_hash": hash, "structure": to_json(&structure)? });
    let outs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    ctx.finish("make-training", &[sites_path], &outs, details)
}

/// Trains the surrogate, from `training` if given and otherwise from rows
/// simulated on the fly with the same streams `make-training` uses.
pub fn train(ctx: &RunContext, sites_path: &Path, training: Option<&Path>) -> Result<SurrogateModel> {
    ctx.prepare()?;
    let (sites, structure) = structure_for(ctx, sites_path)?;
    let sc = &ctx.config.surrogate;
    let spec = sc.net_spec(structure.m);
    let basis = sc.basis()?;
    let rows = sc.rows(ctx.scale);
    let hash = structure.hash();
    let mut models = Vec::with_capacity(structure.n_sites().saturating_sub(1));
    for pos in 1..structure.n_sites() {
        let set = match training {
            Some(dir) => {
                let (set, h) = read_training_set(&dir.join(format!("training/pos_{pos:03}.bin")))
                    .or_else(|_| read_training_set(&dir.join(format!("pos_{pos:03}.bin"))))?;
                if h != hash || set.position != pos {
                    return Err(NpmmError::Incompatible(format!(
                        "training set for position {pos} was built for structure {h}, sites give {hash}"
                    )));
                }
                set
            }
            None => generate_for_position(pos, &structure, &sites, &sc.design, rows, ctx.seed)?,
        };
        models.push(train_for_position(&set, &spec, &basis, ctx.seed)?);
    }
    let model = SurrogateModel {
        sites,
        structure,
        spec,
        basis,
        design: crate::spqr::DesignRecord {
            design: sc.design.clone(),
            rows,
            seed: ctx.seed,
        },
        models,
    };
    write_checkpoint(&ctx.path("surrogate.ckpt"), &model)?;
    let final_loss: Vec<f64> = model.models.iter().map(|m| *m.loss_trace.last().unwrap_or(&f64::NAN)).collect();
    let mut inputs = vec![sites_path];
    if let Some(t) = training {
        inputs.push(t);
    }
    let details = serde_json::json!({ "structure_hash": hash, "rows": rows, "final_loss": final_loss });
    ctx.finish("train", &inputs, &["surrogate.ckpt"], details)?;
    Ok(model)
}

/// Data paths of one fit.
#[derive(Debug, Clone, Copy)]
pub struct DataPaths<'a> {
    pub sites: &'a Path,
    pub obs: &'a Path,
    pub covs: &'a Path,
}

impl DataPaths<'_> {
    fn load(&self, config: &Config) -> Result<Dataset> {
        load_data(self.sites, self.obs, self.covs, config.model.standardize_covariates)
    }
}

/// Runs the chain on the surrogate likelihood; writes `posterior.csv`,
/// `run_manifest.json` and `standardization.json`.
pub fn fit(ctx: &RunContext, data: DataPaths, surrogate: &Path) -> Result<RunManifest> {
    ctx.prepare()?;
    let ds = data.load(&ctx.config)?;
    let fd = ds.to_fit_data();
    let model = read_checkpoint(surrogate)?;
    model.check_sites(&fd.sites)?;
    let mut rng = stream_rng(ctx.seed, stream_id(STREAM_FIT, 0));
    let out = run_chain(&ctx.config.mcmc, &fd, &model, &mut rng)?;
    out.store.write_csv(&ctx.path("posterior.csv"))?;
    ds.standardization.write_json(&ctx.path("standardization.json"))?;
    let c = &ctx.config.mcmc;
    let manifest = RunManifest {
        seed: ctx.seed,
        config_hash: ctx.config.hash()?,
        structure_hash: model.structure.hash(),
        iterations: c.iterations,
        burn_in: c.burn_in,
        thin: c.thin,
        draws: out.store.len(),
        acceptance: out.acceptance,
        proposal_scales: out.proposal_scales,
    };
    manifest.write_json(&ctx.path("run_manifest.json"))?;
    ctx.finish(
        "fit",
        &[data.sites, data.obs, data.covs, surrogate],
        &["posterior.csv", "run_manifest.json", "standardization.json"],
        to_json(&manifest)?,
    )?;
    Ok(manifest)
}

/// Bias-corrects every climate model, projects quantiles against its
/// historical run and counts joint exceedances.
pub fn project(ctx: &RunContext, data: DataPaths, gcm_path: &Path, fit_dir: &Path) -> Result<()> {
    ctx.prepare()?;
    let ds = data.load(&ctx.config)?;
    let stored = super::data::Standardization::read_json(&fit_dir.join("standardization.json"))?;
    if stored != ds.standardization {
        return Err(NpmmError::Incompatible(
            "observed data do not reproduce the fit's standardization constants".into(),
        ));
    }
    let store = PosteriorStore::read_csv(&fit_dir.join("posterior.csv"))?;
    let gcm = read_gcm(gcm_path)?;
    let p = &ctx.config.projection;
    let hist: Vec<i32> = (p.historical.0..=p.historical.1).collect();
    let fut: Vec<i32> = (p.future.0..=p.future.1).collect();
    let models: Vec<String> = {
        let mut m: Vec<String> = gcm.runs.keys().map(|(m, _)| m.clone()).collect();
        m.dedup();
        m
    };
    let ids = ds.site_ids();
    let dir = ctx.path("projection");
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut outputs = Vec::new();
    let mut exceed: Vec<(String, ExceedanceSummary)> = Vec::new();
    let mut summary = csv::Writer::from_writer(Vec::new());
    summary.write_record(["model", "scenario", "level", "min_change", "mean_change", "max_change", "share_positive"])?;
    for (mi, model) in models.iter().enumerate() {
        let windows: BTreeMap<String, Vec<i32>> = gcm
            .runs
            .keys()
            .filter(|(m, _)| m == model)
            .map(|(_, s)| (s.clone(), if *s == p.historical_label { hist.clone() } else { fut.clone() }))
            .collect();
        let corrected = correct_gcm_model(&gcm, model, &p.historical_label, &ds, &hist, &windows)?;
        let mut scen = vec![corrected.runs[&p.historical_label].clone()];
        scen.extend(corrected.runs.values().filter(|s| s.name != p.historical_label).cloned());
        let res = project_quantiles(&store, &ids, &scen, &p.levels, p.draws)?;
        res.write(&dir, &format!("{model}_"))?;
        outputs.push(format!("projection/{model}_quantiles.csv"));
        outputs.push(format!("projection/{model}_summary.csv"));
        for (i, name) in res.scenarios.iter().enumerate().skip(1) {
            for (l, lev) in res.levels.iter().enumerate() {
                let pc = &res.percent_change[i][l];
                let lo = pc.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = pc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let pos = pc.iter().filter(|&&v| v > 0.0).count() as f64 / pc.len() as f64;
                summary.write_record([
                    model.clone(),
                    name.clone(),
                    lev.to_string(),
                    lo.to_string(),
                    mean(pc).to_string(),
                    hi.to_string(),
                    pos.to_string(),
                ])?;
            }
        }
        for (si, sc) in scen.iter().enumerate() {
            let seed = ctx.seed ^ ((mi as u64) << 40 | (si as u64) << 32);
            let e = joint_exceedance(
                &store,
                &ds.sites,
                sc,
                &p.exceedance_levels,
                p.exceedance_draws.min(store.len()),
                p.exceedance_replicates,
                ctx.config.model.rho_r_factor,
                seed,
            )?;
            exceed.extend(e.into_iter().map(|x| (format!("{model}/{}", sc.name), x)));
        }
    }
    let sp = ctx.path("projection_summary.csv");
    let bytes = summary.into_inner().map_err(|e| NpmmError::Data(format!("csv buffer: {e}")))?;
    std::fs::write(&sp, bytes).map_err(io_err(&sp))?;
    write_exceedance_csv(&ctx.path("exceedance.csv"), &exceed)?;
    outputs.push("projection_summary.csv".into());
    outputs.push("exceedance.csv".into());
    let outs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    let details = serde_json::json!({ "models": models, "draws": p.draws });
    ctx.finish("project", &[data.sites, data.obs, data.covs, gcm_path, fit_dir], &outs, details)
}

/// Optional inputs of `diagnose`; each present input adds its reports.
#[derive(Debug, Clone, Copy, Default)]
pub struct DiagnoseInputs<'a> {
    pub surrogate: Option<&'a Path>,
    pub fit_dir: Option<&'a Path>,
    pub data: Option<DataPaths<'a>>,
}

fn surrogate_reports(ctx: &RunContext, path: &Path, outputs: &mut Vec<String>) -> Result<()> {
    let model = read_checkpoint(path)?;
    let rows = ctx.config.surrogate.test_rows;
    let levels = [0.1, 0.5, 0.9];
    let mut pit = csv::Writer::from_path(ctx.path("pit.csv"))?;
    pit.write_record(["position", "pit"])?;
    let mut pit_sum = csv::Writer::from_path(ctx.path("pit_summary.csv"))?;
    pit_sum.write_record(["position", "rows", "ks_statistic", "ks_critical_01"])?;
    let mut imp = csv::Writer::from_path(ctx.path("importance.csv"))?;
    imp.write_record(["position", "feature", "level", "score"])?;
    let test_seed = ctx.seed ^ 0x5445_5354;
    for site in &model.models {
        let set = generate_for_position(
            site.position,
            &model.structure,
            &model.sites,
            &model.design.design,
            rows,
            test_seed,
        )?;
        let v = pit_diagnostic(site, &model.basis, &set)?;
        for x in &v {
            pit.write_record([site.position.to_string(), x.to_string()])?;
        }
        pit_sum.write_record([
            site.position.to_string(),
            v.len().to_string(),
            ks_statistic(&v, |x| x.clamp(0.0, 1.0)).to_string(),
            crate::stats::ks_critical(v.len(), 0.01).to_string(),
        ])?;
        let mut rng = stream_rng(ctx.seed, stream_id(STREAM_DIAGNOSE, site.position as u32));
        let scores = variable_importance(site, &model.basis, &set, &levels, &mut rng)?;
        let m = model.structure.m;
        for (f, row) in scores.iter().enumerate() {
            let name = match f {
                f if f < m => format!("u_nb{}", f + 1),
                f if f == m => "rho".into(),
                f if f == m + 1 => "r".into(),
                f if f == m + 2 => "delta_y".into(),
                _ => "delta_gap".into(),
            };
            for (l, s) in row.iter().enumerate() {
                imp.write_record([site.position.to_string(), name.clone(), levels[l].to_string(), s.to_string()])?;
            }
        }
    }
    pit.flush().map_err(io_err(&ctx.path("pit.csv")))?;
    pit_sum.flush().map_err(io_err(&ctx.path("pit_summary.csv")))?;
    imp.flush().map_err(io_err(&ctx.path("importance.csv")))?;
    outputs.extend(["pit.csv", "pit_summary.csv", "importance.csv"].map(String::from));
    Ok(())
}

fn posterior_report(ctx: &RunContext, fit_dir: &Path, outputs: &mut Vec<String>) -> Result<()> {
    let store = PosteriorStore::read_csv(&fit_dir.join("posterior.csv"))?;
    let mut w = csv::Writer::from_path(ctx.path("posterior_summary.csv"))?;
    w.write_record(["parameter", "mean", "sd", "q025", "q500", "q975", "split_rhat"])?;
    for name in &store.columns {
        let v = store.require(name)?;
        let rhat = if v.len() >= 4 { split_rhat(&[v.clone()]) } else { f64::NAN };
        w.write_record([
            name.clone(),
            mean(&v).to_string(),
            if v.len() > 1 { std_dev(&v).to_string() } else { "NaN".into() },
            sample_quantile(&v, 0.025).to_string(),
            sample_quantile(&v, 0.5).to_string(),
            sample_quantile(&v, 0.975).to_string(),
            rhat.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(&ctx.path("posterior_summary.csv")))?;
    outputs.push("posterior_summary.csv".into());
    Ok(())
}

/// Empirical `χ_u` of rank-standardized maxima pooled over site pairs at
/// most `h` apart, `h` being the largest nearest-neighbour distance.
fn empirical_chi_report(ctx: &RunContext, data: DataPaths, outputs: &mut Vec<String>) -> Result<()> {
    let ds = data.load(&ctx.config)?;
    let n = ds.sites.len();
    let h = ds.sites.max_nearest_distance();
    let ranked: Vec<Vec<f64>> = (0..n)
        .map(|s| crate::stats::rank_standardize(&ds.y.iter().map(|r| r[s]).collect::<Vec<_>>()))
        .collect();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for i in 0..n {
        for j in 0..n {
            if i != j && ds.sites.distance(i, j) <= h {
                a.extend_from_slice(&ranked[i]);
                b.extend_from_slice(&ranked[j]);
            }
        }
    }
    let mut w = csv::Writer::from_path(ctx.path("chi_empirical.csv"))?;
    w.write_record(["u", "h", "chi", "se", "joint", "conditioning"])?;
    for u in [0.5, 0.6, 0.7, 0.8, 0.9, 0.95] {
        match chi_u_empirical(&a, &b, u, h) {
            Ok(e) => w.write_record([
                u.to_string(),
                h.to_string(),
                e.estimate.to_string(),
                e.std_error.to_string(),
                e.joint.to_string(),
                e.conditioning.to_string(),
            ])?,
            Err(NpmmError::UndefinedEstimate(_)) => {
                w.write_record([u.to_string(), h.to_string(), "NaN".into(), "NaN".into(), "0".into(), "0".into()])?
            }
            Err(e) => return Err(e),
        }
    }
    w.flush().map_err(io_err(&ctx.path("chi_empirical.csv")))?;
    outputs.push("chi_empirical.csv".into());
    Ok(())
}

pub fn diagnose(ctx: &RunContext, inputs: DiagnoseInputs) -> Result<()> {
    ctx.prepare()?;
    let mut outputs = Vec::new();
    let mut used: Vec<&Path> = Vec::new();
    if let Some(p) = inputs.surrogate {
        surrogate_reports(ctx, p, &mut outputs)?;
        used.push(p);
    }
    if let Some(d) = inputs.fit_dir {
        posterior_report(ctx, d, &mut outputs)?;
        used.push(d);
    }
    if let Some(d) = inputs.data {
        empirical_chi_report(ctx, d, &mut outputs)?;
        used.extend([d.sites, d.obs, d.covs]);
    }
    if outputs.is_empty() {
        return Err(NpmmError::InvalidArgument(
            "diagnose needs a surrogate, a fit directory or data paths".into(),
        ));
    }
    let outs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    ctx.finish("diagnose", &used, &outs, serde_json::Value::Null)
}

/// A random seed when none is given.
pub fn fresh_seed() -> u64 {
    rand::rng().random()
}
