//! Conditional exceedance `χ_u = P{U(s1) > u | U(s2) > u}`: empirical
//! estimates, surfaces over the two region weights, and a check of the
//! shared-extremal-process case against direct quadrature.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dependence::{clamp_delta, hypoexp_quantile, hypoexp_sf, MixtureSimulator, SiteSet, RHO_R_FACTOR};
use crate::error::{NpmmError, Result};
use crate::rng::{stream_id, stream_rng};
use crate::stats::{gauss_legendre, integrate_gl, rank_standardize};

const STREAM_SURFACE: u32 = 0x4348_0001;
const STREAM_SHARED: u32 = 0x4348_0002;
const BATCH: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiEstimate {
    pub u: f64,
    pub h: f64,
    pub estimate: f64,
    pub std_error: f64,
    /// Replicates with both scores above `u`.
    pub joint: u64,
    /// Replicates with the conditioning score above `u`.
    pub conditioning: u64,
    pub replicates: u64,
}

impl ChiEstimate {
    fn from_counts(u: f64, h: f64, joint: u64, conditioning: u64, replicates: u64) -> Result<Self> {
        if conditioning == 0 {
            return Err(NpmmError::UndefinedEstimate(format!(
                "no conditioning exceedances of u = {u} in {replicates} replicates"
            )));
        }
        let est = joint as f64 / conditioning as f64;
        Ok(ChiEstimate {
            u,
            h,
            estimate: est,
            std_error: (est * (1.0 - est) / conditioning as f64).sqrt(),
            joint,
            conditioning,
            replicates,
        })
    }
}

/// `χ_u` from paired scores with uniform margins; `b` is the conditioning site.
pub fn chi_u_empirical(a: &[f64], b: &[f64], u: f64, h: f64) -> Result<ChiEstimate> {
    if a.len() != b.len() {
        return Err(NpmmError::InvalidArgument(format!(
            "paired samples differ in length: {} and {}",
            a.len(),
            b.len()
        )));
    }
    if !(u > 0.0 && u < 1.0) {
        return Err(NpmmError::InvalidArgument(format!("threshold must lie in (0,1), got {u}")));
    }
    let mut joint = 0;
    let mut cond = 0;
    for (&x, &y) in a.iter().zip(b) {
        if y > u {
            cond += 1;
            if x > u {
                joint += 1;
            }
        }
    }
    ChiEstimate::from_counts(u, h, joint, cond, a.len() as u64)
}

/// Rank-standardizes both samples before estimating.
pub fn chi_u_ranked(a: &[f64], b: &[f64], u: f64, h: f64) -> Result<ChiEstimate> {
    chi_u_empirical(&rank_standardize(a), &rank_standardize(b), u, h)
}

/// Dependence construction behind a χ surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ChiVariant {
    /// Two sites at distance `h` under the full mixture (Brown–Resnick
    /// extremal process with nugget plus Gaussian process).
    Mixture { rho: f64, r: f64, rho_r_factor: f64 },
    /// One exponential shared by both sites plus independent exponentials.
    SharedR,
}

impl ChiVariant {
    /// GP correlation 0.4 at `h = 0.12`, no nugget.
    pub fn reference() -> Self {
        ChiVariant::Mixture {
            rho: 0.134,
            r: 1.0,
            rho_r_factor: RHO_R_FACTOR,
        }
    }
}

/// Counts `(joint, conditioning)` for each threshold pair over `replicates`
/// draws of `(V1, V2)`, in parallel batches with a fixed reduction order.
fn exceedance_counts<S>(
    sample: S,
    thresholds: &[(f64, f64)],
    replicates: usize,
    seed: u64,
    major: u32,
) -> Vec<(u64, u64)>
where
    S: Fn(&mut crate::rng::StreamRng) -> (f64, f64) + Sync,
{
    let batches = replicates.div_ceil(BATCH);
    let per_batch: Vec<Vec<(u64, u64)>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, stream_id(major, b as u32));
            let n = BATCH.min(replicates - b * BATCH);
            let mut counts = vec![(0u64, 0u64); thresholds.len()];
            for _ in 0..n {
                let (v1, v2) = sample(&mut rng);
                for (c, &(t1, t2)) in counts.iter_mut().zip(thresholds) {
                    if v2 > t2 {
                        c.1 += 1;
                        if v1 > t1 {
                            c.0 += 1;
                        }
                    }
                }
            }
            counts
        })
        .collect();
    let mut total = vec![(0u64, 0u64); thresholds.len()];
    for counts in per_batch {
        for (t, c) in total.iter_mut().zip(counts) {
            t.0 += c.0;
            t.1 += c.1;
        }
    }
    total
}

fn shared_r_pair<R: Rng + ?Sized>(d1: f64, d2: f64, rng: &mut R) -> (f64, f64) {
    let r: f64 = rng.sample(Exp1);
    let w1: f64 = rng.sample(Exp1);
    let w2: f64 = rng.sample(Exp1);
    (d1 * r + (1.0 - d1) * w1, d2 * r + (1.0 - d2) * w2)
}

/// `χ_u` at each threshold in `us` for one weight pair.
pub fn chi_ladder(
    delta1: f64,
    delta2: f64,
    variant: ChiVariant,
    h: f64,
    us: &[f64],
    replicates: usize,
    seed: u64,
    stream: u32,
) -> Result<Vec<ChiEstimate>> {
    let (d1, d2) = (clamp_delta(delta1), clamp_delta(delta2));
    let thresholds = us
        .iter()
        .map(|&u| Ok((hypoexp_quantile(u, d1)?, hypoexp_quantile(u, d2)?)))
        .collect::<Result<Vec<_>>>()?;
    let counts = match variant {
        ChiVariant::SharedR => exceedance_counts(
            |rng| shared_r_pair(d1, d2, rng),
            &thresholds,
            replicates,
            seed,
            stream,
        ),
        ChiVariant::Mixture { rho, r, rho_r_factor } => {
            let sites = SiteSet::new(vec![[0.0, 0.0], [h, 0.0]], vec![1, 2])?;
            let sim = MixtureSimulator::new(&sites, rho_r_factor)?;
            let gp = sim.gp_factor(rho, r)?;
            exceedance_counts(
                |rng| {
                    let (v, _) = sim.replicate(d1, d2, rho, r, &gp, rng);
                    (v[0], v[1])
                },
                &thresholds,
                replicates,
                seed,
                stream,
            )
        }
    };
    us.iter()
        .zip(counts)
        .map(|(&u, (j, c))| ChiEstimate::from_counts(u, h, j, c, replicates as u64))
        .collect()
}

/// `χ_u(h)` over a grid of region weights; entry `[i][j]` is `(δ1[i], δ2[j])`.
pub fn chi_surface(
    delta1: &[f64],
    delta2: &[f64],
    variant: ChiVariant,
    h: f64,
    u: f64,
    replicates: usize,
    seed: u64,
) -> Result<Vec<Vec<ChiEstimate>>> {
    let mut out = Vec::with_capacity(delta1.len());
    for (i, &d1) in delta1.iter().enumerate() {
        let mut row = Vec::with_capacity(delta2.len());
        for (j, &d2) in delta2.iter().enumerate() {
            let stream = STREAM_SURFACE ^ ((i as u32) << 20 | (j as u32) << 8);
            row.push(chi_ladder(d1, d2, variant, h, &[u], replicates, seed, stream)?[0]);
        }
        out.push(row);
    }
    Ok(out)
}

pub fn write_surface_csv(path: &Path, delta1: &[f64], delta2: &[f64], surface: &[Vec<ChiEstimate>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["delta1", "delta2", "u", "h", "chi", "se", "joint", "conditioning", "replicates"])?;
    for (i, row) in surface.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            w.write_record([
                delta1[i].to_string(),
                delta2[j].to_string(),
                e.u.to_string(),
                e.h.to_string(),
                e.estimate.to_string(),
                e.std_error.to_string(),
                e.joint.to_string(),
                e.conditioning.to_string(),
                e.replicates.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| NpmmError::io(path, e))
}

/// Terms of `P[Y1 > y, Y2 > y]` for `Y1 = δR + (1−δ)W1`, `Y2 = (1−δ)R + δW2`
/// with `R, W1, W2` iid unit exponential, each by quadrature over `R = r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointSurvivalTerms {
    /// Both `W` thresholds positive.
    pub j1: f64,
    /// Only site 1 still needs its `W` (δ < 0.5).
    pub j2: f64,
    /// Only site 2 still needs its `W` (δ > 0.5).
    pub j3: f64,
    /// `R` alone pushes both sites over.
    pub j4: f64,
    /// Marginal survival of `Y1` by the same quadrature.
    pub marginal: f64,
}

impl JointSurvivalTerms {
    pub fn joint(&self) -> f64 {
        self.j1 + self.j2 + self.j3 + self.j4
    }
}

const QUAD_NODES: usize = 64;
const QUAD_CHECK_NODES: usize = 96;
const QUAD_RTOL: f64 = 1e-10;

fn survival_terms(delta: f64, y: f64, rule: &(Vec<f64>, Vec<f64>)) -> JointSurvivalTerms {
    let d = delta;
    let a = y / d; // r1 > 0 below a
    let b = y / (1.0 - d); // r2 > 0 below b
    let s1 = |r: f64| (-(y - d * r) / (1.0 - d)).exp();
    let s2 = |r: f64| (-(y - (1.0 - d) * r) / d).exp();
    let lo = a.min(b);
    let j1 = integrate_gl(|r| (-r).exp() * s1(r) * s2(r), 0.0, lo, rule);
    let j2 = if b < a {
        integrate_gl(|r| (-r).exp() * s1(r), b, a, rule)
    } else {
        0.0
    };
    let j3 = if a < b {
        integrate_gl(|r| (-r).exp() * s2(r), a, b, rule)
    } else {
        0.0
    };
    let j4 = (-a.max(b)).exp();
    let marginal = integrate_gl(|r| (-r).exp() * s1(r), 0.0, a, rule) + (-a).exp();
    JointSurvivalTerms { j1, j2, j3, j4, marginal }
}

/// Joint-survival decomposition at `y`; errors if doubling the rule's
/// resolution moves any term by more than a relative `1e-10`.
pub fn joint_survival_terms(delta: f64, y: f64) -> Result<JointSurvivalTerms> {
    if !(delta > 0.0 && delta < 1.0) || !(y >= 0.0) {
        return Err(NpmmError::InvalidArgument(format!(
            "need δ in (0,1) and y ≥ 0, got δ = {delta}, y = {y}"
        )));
    }
    let t = survival_terms(delta, y, &gauss_legendre(QUAD_NODES));
    let c = survival_terms(delta, y, &gauss_legendre(QUAD_CHECK_NODES));
    let pairs = [(t.j1, c.j1), (t.j2, c.j2), (t.j3, c.j3), (t.marginal, c.marginal)];
    for (a, b) in pairs {
        if (a - b).abs() > QUAD_RTOL * b.abs().max(f64::MIN_POSITIVE) && (a - b).abs() > 1e-300 {
            return Err(NpmmError::Numerical(format!(
                "quadrature did not converge at δ = {delta}, y = {y}: {a} vs {b}"
            )));
        }
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderPoint {
    pub u: f64,
    /// Common marginal threshold `y_u`.
    pub y: f64,
    pub mc: ChiEstimate,
    /// `P[Y1 > y_u, Y2 > y_u] / (1 − u)` by quadrature.
    pub quadrature: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCheck {
    pub y: f64,
    pub mc: f64,
    pub std_error: f64,
    pub quadrature: f64,
}

impl SurvivalCheck {
    pub fn agrees(&self, n_se: f64) -> bool {
        (self.mc - self.quadrature).abs() <= n_se * self.std_error
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub delta: f64,
    pub ladder: Vec<LadderPoint>,
    pub survival: Vec<SurvivalCheck>,
}

impl DeltaReport {
    /// Non-increasing along the ladder with a strict overall drop.
    pub fn declining(&self) -> bool {
        let e: Vec<f64> = self.ladder.iter().map(|p| p.mc.estimate).collect();
        e.windows(2).all(|w| w[1] <= w[0]) && e.last() < e.first()
    }

    pub fn final_estimate(&self) -> f64 {
        self.ladder.last().map_or(f64::NAN, |p| p.mc.estimate)
    }

    pub fn survival_agrees(&self, n_se: f64) -> bool {
        self.survival.iter().all(|s| s.agrees(n_se))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppendixReport {
    pub replicates: usize,
    pub deltas: Vec<DeltaReport>,
}

/// Shared-extremal-process check with `δ1 = δ`, `δ2 = 1 − δ`: Monte-Carlo
/// `χ_u` ladder and joint survival at `ys`, each beside its quadrature value.
pub fn appendix_a_verify(
    deltas: &[f64],
    u_ladder: &[f64],
    ys: &[f64],
    replicates: usize,
    seed: u64,
) -> Result<AppendixReport> {
    let mut out = Vec::with_capacity(deltas.len());
    for (i, &delta) in deltas.iter().enumerate() {
        let d = clamp_delta(delta);
        let y_u = u_ladder
            .iter()
            .map(|&u| hypoexp_quantile(u, d))
            .collect::<Result<Vec<_>>>()?;
        // both margins coincide, so one threshold serves both sites
        let mut thresholds: Vec<(f64, f64)> = y_u.iter().map(|&y| (y, y)).collect();
        thresholds.extend(ys.iter().map(|&y| (y, y)));
        let counts = exceedance_counts(
            |rng| shared_r_pair(d, 1.0 - d, rng),
            &thresholds,
            replicates,
            seed,
            STREAM_SHARED ^ ((i as u32) << 16),
        );
        let mut ladder = Vec::with_capacity(u_ladder.len());
        for (k, &u) in u_ladder.iter().enumerate() {
            let (j, c) = counts[k];
            let terms = joint_survival_terms(d, y_u[k])?;
            ladder.push(LadderPoint {
                u,
                y: y_u[k],
                mc: ChiEstimate::from_counts(u, 0.0, j, c, replicates as u64)?,
                quadrature: terms.joint() / hypoexp_sf(y_u[k], d),
            });
        }
        let mut survival = Vec::with_capacity(ys.len());
        for (k, &y) in ys.iter().enumerate() {
            let (j, _) = counts[u_ladder.len() + k];
            let p = j as f64 / replicates as f64;
            survival.push(SurvivalCheck {
                y,
                mc: p,
                std_error: (p * (1.0 - p) / replicates as f64).sqrt().max(1.0 / replicates as f64),
                quadrature: joint_survival_terms(d, y)?.joint(),
            });
        }
        out.push(DeltaReport { delta, ladder, survival });
    }
    Ok(AppendixReport {
        replicates,
        deltas: out,
    })
}

pub fn write_appendix_csv(path: &Path, report: &AppendixReport) -> Result<()> {
    let io = |e| NpmmError::io(path, e);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "delta,kind,level,mc,se,quadrature").map_err(io)?;
    for d in &report.deltas {
        for p in &d.ladder {
            writeln!(f, "{},chi,{},{},{},{}", d.delta, p.u, p.mc.estimate, p.mc.std_error, p.quadrature).map_err(io)?;
        }
        for s in &d.survival {
            writeln!(f, "{},joint_survival,{},{},{},{}", d.delta, s.y, s.mc, s.std_error, s.quadrature).map_err(io)?;
        }
    }
    f.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comonotone_and_independent_pairs() {
        let mut rng = stream_rng(1, 0);
        let a: Vec<f64> = (0..200_000).map(|_| rng.random()).collect();
        let e = chi_u_empirical(&a, &a, 0.99, 0.1).unwrap();
        assert_eq!(e.estimate, 1.0);
        let b: Vec<f64> = (0..200_000).map(|_| rng.random()).collect();
        let e = chi_u_empirical(&a, &b, 0.99, 0.1).unwrap();
        assert!((e.estimate - 0.01).abs() < 3.0 * e.std_error, "{e:?}");
        assert!(matches!(
            chi_u_empirical(&[0.1, 0.2], &[0.3, 0.4], 0.9, 0.0),
            Err(NpmmError::UndefinedEstimate(_))
        ));
    }

    #[test]
    fn rank_version_is_transform_invariant() {
        let mut rng = stream_rng(2, 0);
        let r: Vec<f64> = (0..50_000).map(|_| rng.sample(Exp1)).collect();
        let a: Vec<f64> = r.iter().map(|x| x + rng.sample::<f64, _>(Exp1)).collect();
        let b: Vec<f64> = r.iter().map(|x| x + rng.sample::<f64, _>(Exp1)).collect();
        let e1 = chi_u_ranked(&a, &b, 0.95, 0.0).unwrap();
        let ea: Vec<f64> = a.iter().map(|x| x.exp()).collect();
        let eb: Vec<f64> = b.iter().map(|x| x.exp()).collect();
        assert_eq!(e1, chi_u_ranked(&ea, &eb, 0.95, 0.0).unwrap());
    }

    #[test]
    fn quadrature_marginal_matches_closed_form() {
        for &d in &[0.1, 0.3, 0.5, 0.7, 0.9] {
            for &y in &[0.5, 1.0, 3.0, 5.0, 12.0] {
                let t = joint_survival_terms(d, y).unwrap();
                let m = hypoexp_sf(y, d);
                assert!((t.marginal - m).abs() < 1e-10 * m.max(1e-300).max(1e-10), "δ={d} y={y}");
            }
        }
    }

    #[test]
    fn lone_extremal_term_vanishes_relative_to_margin() {
        let t = joint_survival_terms(0.3, 20.0).unwrap();
        assert!(t.j4 / t.marginal < 1e-3);
        assert_eq!(t.j3, 0.0);
        let t = joint_survival_terms(0.7, 20.0).unwrap();
        assert_eq!(t.j2, 0.0);
    }

    #[test]
    fn terms_symmetric_under_reflection() {
        // δ ↔ 1 − δ swaps the sites
        let a = joint_survival_terms(0.3, 4.0).unwrap();
        let b = joint_survival_terms(0.7, 4.0).unwrap();
        assert!((a.joint() - b.joint()).abs() < 1e-12);
        assert!((a.j2 - b.j3).abs() < 1e-12);
    }

    #[test]
    fn half_weight_ratio_decays_slowly() {
        // with δ = 1/2 both margins are Gamma(2, 1/2); the ratio still shrinks
        let ys = [2.0, 5.0, 10.0, 20.0];
        let r: Vec<f64> = ys
            .iter()
            .map(|&y| {
                let t = joint_survival_terms(0.5, y).unwrap();
                t.joint() / t.marginal
            })
            .collect();
        assert!(r.windows(2).all(|w| w[1] < w[0]), "{r:?}");
        let y = 20.0;
        let closed = (2.0 * (-2.0 * y as f64).exp() - (-4.0 * y as f64).exp()) / ((1.0 + 2.0 * y) * (-2.0 * y as f64).exp());
        assert!((r[3] - closed).abs() < 1e-9, "{} vs {closed}", r[3]);
    }

    #[test]
    fn shared_r_mc_matches_quadrature() {
        let rep = appendix_a_verify(&[0.2, 0.8], &[0.9, 0.99], &[1.0, 3.0], 400_000, 5).unwrap();
        for d in &rep.deltas {
            assert!(d.survival_agrees(3.0), "{d:?}");
            for p in &d.ladder {
                assert!((p.mc.estimate - p.quadrature).abs() < 4.0 * p.mc.std_error, "{p:?}");
            }
        }
    }

    #[test]
    fn full_weight_shared_process_is_dependent() {
        let e = chi_ladder(1.0, 1.0, ChiVariant::SharedR, 0.12, &[0.999], 200_000, 3, 1).unwrap();
        assert!(e[0].estimate > 0.9);
    }

    #[test]
    fn surface_is_symmetric_for_exchangeable_sites() {
        let s = chi_surface(&[0.2, 0.8], &[0.2, 0.8], ChiVariant::reference(), 0.12, 0.95, 100_000, 4).unwrap();
        let (a, b) = (s[0][1], s[1][0]);
        let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
        assert!((a.estimate - b.estimate).abs() < 4.0 * se, "{a:?} {b:?}");
    }

    #[test]
    fn low_weights_decay_with_threshold() {
        let e = chi_ladder(0.2, 0.3, ChiVariant::reference(), 0.12, &[0.99, 0.999], 300_000, 6, 2).unwrap();
        assert!(e[1].estimate < e[0].estimate, "{e:?}");
    }
}
