//! Neural synthetic likelihood.
//!
//! Each Vecchia factor `f_i(u_i | u_N(i), θ₂)` is a mixture of M-splines
//! whose weights come from a per-site softmax network. Networks are trained
//! on data simulated from the exact mixture model at parameters drawn from a
//! design distribution.

mod basis;
mod checkpoint;
mod diagnostics;
mod net;

pub use basis::SplineBasis;
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use diagnostics::{mixture_quantile, pit_diagnostic, variable_importance};
pub use net::{gradient_check, Activation, Layer, Mlp, NetSpec, Optimizer, OptimizerState};

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dependence::{DeltaField, DependenceParams, MixtureSimulator, SiteSet, RHO_R_FACTOR};
use crate::error::{NpmmError, Result};
use crate::rng::{stream_id, stream_rng};
use crate::vecchia::{delta_features, write_input_ordered, VecchiaStructure, DELTA_GAP_SCALE};

const STREAM_GENERATE: u32 = 0x5151_0001;
const STREAM_TRAIN: u32 = 0x5151_0002;

/// Sampling ranges of the design distribution; each coordinate is uniform
/// on its interval, degenerate intervals fix the value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub rho: (f64, f64),
    pub r: (f64, f64),
    pub delta1: (f64, f64),
    pub delta2: (f64, f64),
    pub rho_r_factor: f64,
}

impl Default for Design {
    fn default() -> Self {
        Design {
            rho: (0.0, 1.0),
            r: (0.0, 1.0),
            delta1: (0.0, 1.0),
            delta2: (0.0, 1.0),
            rho_r_factor: RHO_R_FACTOR,
        }
    }
}

impl Design {
    /// Pure Gaussian-process design (δ ≡ 0).
    pub fn gaussian() -> Self {
        Design {
            delta1: (0.0, 0.0),
            delta2: (0.0, 0.0),
            ..Design::default()
        }
    }

    /// Draws `(rho, r, delta1, delta2)`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 4] {
        let pick = |rng: &mut R, (lo, hi): (f64, f64)| {
            if hi <= lo {
                return lo;
            }
            loop {
                let v = lo + (hi - lo) * rng.random::<f64>();
                if v > lo {
                    return v;
                }
            }
        };
        [
            pick(rng, self.rho),
            pick(rng, self.r),
            pick(rng, self.delta1),
            pick(rng, self.delta2),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRecord {
    pub design: Design,
    pub rows: usize,
    pub seed: u64,
}

/// Simulated rows for one ordered position.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub position: usize,
    /// Network inputs, `rows × (m + 4)`.
    pub inputs: Array2<f64>,
    pub response: Vec<f64>,
    /// `(rho, r, delta1, delta2)` of each row.
    pub theta: Vec<[f64; 4]>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }

    /// Rows `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> TrainingSet {
        TrainingSet {
            position: self.position,
            inputs: self.inputs.slice(ndarray::s![start..end, ..]).to_owned(),
            response: self.response[start..end].to_vec(),
            theta: self.theta[start..end].to_vec(),
        }
    }
}

/// Simulates `n` rows for ordered position `pos`; only the site and its
/// neighbours are simulated.
pub fn generate_training<R: Rng + ?Sized>(
    pos: usize,
    structure: &VecchiaStructure,
    sites: &SiteSet,
    design: &Design,
    n: usize,
    rng: &mut R,
) -> Result<TrainingSet> {
    let m = structure.m;
    let mut idx = vec![structure.ordering[pos]];
    idx.extend(structure.neighbors[pos].iter().map(|&p| structure.ordering[p]));
    let sim = MixtureSimulator::new(&sites.subset(&idx), design.rho_r_factor)?;
    let k = structure.neighbors[pos].len();
    let mut inputs = Array2::zeros((n, m + 4));
    let mut response = Vec::with_capacity(n);
    let mut theta = Vec::with_capacity(n);
    for row in 0..n {
        let th = design.draw(rng);
        let [rho, r, d1, d2] = th;
        let gp = sim.gp_factor(rho, r)?;
        let (_, u) = sim.replicate(d1, d2, rho, r, &gp, rng);
        let mut x = inputs.row_mut(row);
        for j in 0..k {
            x[j] = u[j + 1];
        }
        let (dy, gap) = delta_features(pos, structure, &sites.region, d1, d2);
        x[m] = rho;
        x[m + 1] = r;
        x[m + 2] = dy;
        x[m + 3] = gap / DELTA_GAP_SCALE;
        response.push(u[0]);
        theta.push(th);
    }
    Ok(TrainingSet {
        position: pos,
        inputs,
        response,
        theta,
    })
}

/// Spline values of each response, `rows × K`.
pub fn basis_matrix(basis: &SplineBasis, u: &[f64]) -> Array2<f64> {
    let mut out = Array2::zeros((u.len(), basis.k));
    for (i, &v) in u.iter().enumerate() {
        basis.eval_into(v, out.row_mut(i).as_slice_mut().expect("contiguous row"));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiteModel {
    pub position: usize,
    pub net: Mlp,
    /// Mean training loss per epoch.
    pub loss_trace: Vec<f64>,
}

/// Fits one site network by mini-batch optimisation of the mean negative
/// log density.
pub fn train_site<R: Rng + ?Sized>(
    training: &TrainingSet,
    spec: &NetSpec,
    basis: &SplineBasis,
    rng: &mut R,
) -> Result<SiteModel> {
    spec.validate()?;
    if training.len() < spec.batch_size {
        return Err(NpmmError::InvalidArgument(format!(
            "{} training rows is fewer than the batch size {}",
            training.len(),
            spec.batch_size
        )));
    }
    if training.inputs.ncols() != spec.input_dim || basis.k != spec.output_dim {
        return Err(NpmmError::InvalidArgument(format!(
            "training inputs have {} columns and the basis {} functions; spec expects {} and {}",
            training.inputs.ncols(),
            basis.k,
            spec.input_dim,
            spec.output_dim
        )));
    }
    let bmat = basis_matrix(basis, &training.response);
    let mut net = Mlp::init(spec, rng)?;
    let mut opt = OptimizerState::new(spec.optimizer, spec.learning_rate, &net);
    let mut order: Vec<usize> = (0..training.len()).collect();
    let mut trace = Vec::with_capacity(spec.epochs);
    for epoch in 0..spec.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(spec.batch_size) {
            let xb = training.inputs.select(Axis(0), chunk);
            let bb = bmat.select(Axis(0), chunk);
            let (loss, grads) = net.loss_and_grad(xb.view(), bb.view());
            if !loss.is_finite() {
                return Err(NpmmError::TrainingDiverged {
                    epoch,
                    learning_rate: spec.learning_rate,
                    detail: format!("batch loss {loss} at position {}", training.position),
                });
            }
            total += loss * chunk.len() as f64;
            opt.step(&mut net, &grads);
        }
        trace.push(total / training.len() as f64);
    }
    Ok(SiteModel {
        position: training.position,
        net,
        loss_trace: trace,
    })
}

/// Trained networks for every ordered position after the first.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    pub sites: SiteSet,
    pub structure: VecchiaStructure,
    pub spec: NetSpec,
    pub basis: SplineBasis,
    pub design: DesignRecord,
    /// `models[p - 1]` serves position `p`.
    pub models: Vec<SiteModel>,
}

/// Training rows of one position on its own seeded stream.
pub fn generate_for_position(
    pos: usize,
    structure: &VecchiaStructure,
    sites: &SiteSet,
    design: &Design,
    rows: usize,
    seed: u64,
) -> Result<TrainingSet> {
    let mut g = stream_rng(seed, stream_id(STREAM_GENERATE, pos as u32));
    generate_training(pos, structure, sites, design, rows, &mut g)
}

/// Trains the network of `data.position` on its own seeded stream.
pub fn train_for_position(data: &TrainingSet, spec: &NetSpec, basis: &SplineBasis, seed: u64) -> Result<SiteModel> {
    let mut t = stream_rng(seed, stream_id(STREAM_TRAIN, data.position as u32));
    train_site(data, spec, basis, &mut t)
}

/// Generates data and trains every site network, one RNG stream per site.
pub fn train_surrogate(
    sites: &SiteSet,
    structure: &VecchiaStructure,
    spec: &NetSpec,
    basis: &SplineBasis,
    design: &Design,
    rows: usize,
    seed: u64,
) -> Result<SurrogateModel> {
    let models = (1..structure.n_sites())
        .into_par_iter()
        .map(|pos| {
            let data = generate_for_position(pos, structure, sites, design, rows, seed)?;
            train_for_position(&data, spec, basis, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SurrogateModel {
        sites: sites.clone(),
        structure: structure.clone(),
        spec: spec.clone(),
        basis: basis.clone(),
        design: DesignRecord {
            design: design.clone(),
            rows,
            seed,
        },
        models,
    })
}

/// `log Σ_k π_k B_k(u)`.
pub fn conditional_logdensity(u: f64, x: &[f64], model: &SiteModel, basis: &SplineBasis) -> Result<f64> {
    let b = basis.eval(u)?;
    let pi = model.net.forward_one(x)?;
    Ok(pi.iter().zip(&b).map(|(p, b)| p * b).sum::<f64>().ln())
}

impl SurrogateModel {
    pub fn n_sites(&self) -> usize {
        self.structure.n_sites()
    }

    pub fn check_compatible(&self, structure: &VecchiaStructure) -> Result<()> {
        let (a, b) = (self.structure.hash(), structure.hash());
        if a != b {
            return Err(NpmmError::Incompatible(format!(
                "surrogate was trained for structure {a}, data uses {b}"
            )));
        }
        Ok(())
    }

    /// Log factor of position `pos` for every year; `u_ord[t]` holds the
    /// ordered scores of year `t`.
    pub fn factor_logdens(
        &self,
        pos: usize,
        u_ord: &[Vec<f64>],
        rho: f64,
        r: f64,
        deltas: &DeltaField,
    ) -> Vec<f64> {
        if pos == 0 {
            return vec![0.0; u_ord.len()];
        }
        let d = self.structure.m + 4;
        let mut x = Array2::zeros((u_ord.len(), d));
        for (t, u) in u_ord.iter().enumerate() {
            write_input_ordered(
                pos,
                u,
                &self.structure,
                &self.sites.region,
                rho,
                r,
                deltas.delta1[t],
                deltas.delta2[t],
                x.row_mut(t).as_slice_mut().expect("contiguous row"),
            );
        }
        self.factor_logdens_inputs(pos, x.view(), u_ord.iter().map(|u| u[pos]))
    }

    /// Log factor for prepared inputs and responses.
    pub fn factor_logdens_inputs(
        &self,
        pos: usize,
        x: ArrayView2<f64>,
        response: impl Iterator<Item = f64>,
    ) -> Vec<f64> {
        let model = &self.models[pos - 1];
        let mut logits = model.net.logits(x);
        let mut b = vec![0.0; self.basis.k];
        response
            .zip(logits.rows_mut())
            .map(|(u, mut row)| {
                self.basis.eval_into(u, &mut b);
                let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                let mut f = 0.0;
                for (l, bk) in row.iter_mut().zip(&b) {
                    let e = (*l - mx).exp();
                    s += e;
                    f += e * bk;
                }
                (f / s).ln()
            })
            .collect()
    }
}

/// Surrogate log likelihood of one replicate `u` (original site order);
/// the first ordered site has a uniform margin and contributes zero.
pub fn synthetic_loglik(
    u: &[f64],
    params: &DependenceParams,
    deltas: &DeltaField,
    t: usize,
    model: &SurrogateModel,
    structure: &VecchiaStructure,
) -> Result<f64> {
    model.check_compatible(structure)?;
    if u.len() != model.n_sites() {
        return Err(NpmmError::Incompatible(format!(
            "{} scores for a surrogate over {} sites",
            u.len(),
            model.n_sites()
        )));
    }
    if let Some(bad) = u.iter().find(|x| !(**x > 0.0 && **x < 1.0)) {
        return Err(NpmmError::InvalidArgument(format!(
            "scores must lie in (0,1), got {bad}"
        )));
    }
    let u_ord: Vec<f64> = structure.ordering.iter().map(|&s| u[s]).collect();
    let single = DeltaField {
        delta1: vec![deltas.delta1[t]],
        delta2: vec![deltas.delta2[t]],
    };
    let rows = [u_ord];
    Ok((1..model.n_sites())
        .map(|p| model.factor_logdens(p, &rows, params.rho, params.r, &single)[0])
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{gauss_legendre, integrate_gl, ks_critical, ks_statistic};
    use crate::vecchia::build_structure;

    fn sites(n: usize, seed: u64) -> SiteSet {
        let mut rng = stream_rng(seed, 0);
        let coords: Vec<[f64; 2]> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
        let region = coords.iter().map(|c| if c[1] > 0.5 { 1 } else { 2 }).collect();
        SiteSet::new(coords, region).unwrap()
    }

    fn tiny_spec(input_dim: usize) -> NetSpec {
        NetSpec {
            hidden: vec![8, 6],
            epochs: 3,
            batch_size: 100,
            ..NetSpec::default_for(input_dim)
        }
    }

    #[test]
    fn training_rows_have_the_right_shape_and_uniform_response() {
        let s = sites(6, 1);
        let v = build_structure(&s, 3).unwrap();
        let mut rng = stream_rng(4, 0);
        let one = generate_training(4, &v, &s, &Design::default(), 1, &mut rng).unwrap();
        assert_eq!(one.inputs.ncols(), 3 + 4);
        assert!(one.response[0] > 0.0 && one.response[0] < 1.0);

        let n = 100_000;
        let data = generate_training(5, &v, &s, &Design::default(), n, &mut rng).unwrap();
        let crit = ks_critical(n, 0.01);
        assert!(ks_statistic(&data.response, |x| x) < crit);
        for c in 0..4 {
            let col: Vec<f64> = data.theta.iter().map(|t| t[c]).collect();
            assert!(ks_statistic(&col, |x| x) < crit, "design column {c}");
        }
    }

    #[test]
    fn first_site_contributes_nothing() {
        let s = sites(1, 2);
        let v = build_structure(&s, 2).unwrap();
        let basis = SplineBasis::cubic15();
        let model = train_surrogate(&s, &v, &tiny_spec(6), &basis, &Design::default(), 100, 1)
            .unwrap();
        let p = DependenceParams {
            beta10: 0.0,
            beta11: 0.0,
            beta20: 0.0,
            beta21: 0.0,
            rho: 0.3,
            r: 0.5,
        };
        let d = DeltaField::constant(0.4, 0.6, 1);
        assert_eq!(synthetic_loglik(&[0.42], &p, &d, 0, &model, &v).unwrap(), 0.0);
    }

    #[test]
    fn density_integrates_to_one_for_random_networks() {
        let basis = SplineBasis::cubic15();
        let spec = NetSpec::default_for(6);
        let mut rng = stream_rng(9, 0);
        let rule = gauss_legendre(12);
        for _ in 0..100 {
            let net = Mlp::init(&spec, &mut rng).unwrap();
            let model = SiteModel {
                position: 1,
                net,
                loss_trace: vec![],
            };
            let x: Vec<f64> = (0..6).map(|_| rng.random()).collect();
            let total: f64 = (0..12)
                .map(|k| {
                    integrate_gl(
                        |u| conditional_logdensity(u, &x, &model, &basis).unwrap().exp(),
                        k as f64 / 12.0,
                        (k + 1) as f64 / 12.0,
                        &rule,
                    )
                })
                .sum();
            assert!((total - 1.0).abs() < 1e-6, "{total}");
            let pi = model.net.forward_one(&x).unwrap();
            assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn incompatible_structure_is_rejected() {
        let s = sites(4, 3);
        let v = build_structure(&s, 3).unwrap();
        let basis = SplineBasis::cubic15();
        let model = train_surrogate(&s, &v, &tiny_spec(7), &basis, &Design::default(), 100, 1)
            .unwrap();
        let other = build_structure(&s, 2).unwrap();
        let p = DependenceParams {
            beta10: 0.0,
            beta11: 0.0,
            beta20: 0.0,
            beta21: 0.0,
            rho: 0.3,
            r: 0.5,
        };
        let d = DeltaField::constant(0.4, 0.6, 1);
        let err = synthetic_loglik(&[0.2, 0.3, 0.4, 0.5], &p, &d, 0, &model, &other).unwrap_err();
        assert!(matches!(err, NpmmError::Incompatible(_)));
    }

    #[test]
    fn training_is_deterministic_and_rejects_small_sets() {
        let s = sites(3, 5);
        let v = build_structure(&s, 2).unwrap();
        let basis = SplineBasis::cubic15();
        let spec = tiny_spec(6);
        let a = train_surrogate(&s, &v, &spec, &basis, &Design::default(), 300, 8).unwrap();
        let b = train_surrogate(&s, &v, &spec, &basis, &Design::default(), 300, 8).unwrap();
        assert_eq!(a, b);
        let mut rng = stream_rng(1, 1);
        let data = generate_training(1, &v, &s, &Design::default(), 50, &mut rng).unwrap();
        assert!(train_site(&data, &spec, &basis, &mut rng).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let s = sites(3, 5);
        let v = build_structure(&s, 2).unwrap();
        let basis = SplineBasis::cubic15();
        let spec = NetSpec {
            learning_rate: 1e200,
            optimizer: Optimizer::Sgd,
            ..tiny_spec(6)
        };
        let mut rng = stream_rng(1, 2);
        let data = generate_training(2, &v, &s, &Design::default(), 400, &mut rng).unwrap();
        match train_site(&data, &spec, &basis, &mut rng) {
            Err(NpmmError::TrainingDiverged { learning_rate, .. }) => {
                assert_eq!(learning_rate, 1e200)
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn replicates_add() {
        let s = sites(4, 6);
        let v = build_structure(&s, 3).unwrap();
        let basis = SplineBasis::cubic15();
        let model = train_surrogate(&s, &v, &tiny_spec(7), &basis, &Design::default(), 200, 2)
            .unwrap();
        let p = DependenceParams {
            beta10: 0.0,
            beta11: 0.0,
            beta20: 0.0,
            beta21: 0.0,
            rho: 0.3,
            r: 0.5,
        };
        let d = DeltaField {
            delta1: vec![0.2, 0.7],
            delta2: vec![0.9, 0.1],
        };
        let u = [vec![0.1, 0.5, 0.7, 0.3], vec![0.8, 0.4, 0.6, 0.2]];
        let each: f64 = (0..2)
            .map(|t| synthetic_loglik(&u[t], &p, &d, t, &model, &v).unwrap())
            .sum();
        let ord: Vec<Vec<f64>> = u
            .iter()
            .map(|x| v.ordering.iter().map(|&s| x[s]).collect())
            .collect();
        let batched: f64 = (1..4)
            .map(|q| model.factor_logdens(q, &ord, p.rho, p.r, &d).iter().sum::<f64>())
            .sum();
        assert!((each - batched).abs() < 1e-12);
    }
}
