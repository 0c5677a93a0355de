//! Spatially varying coefficient fields: `θ(s) = θ̃(s) + e(s)` with
//! `θ̃ ~ GP(β, τ² exp(−h/ρ))` and iid nugget `e(s) ~ N(0, v)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::{inverse_gamma_logpdf, normal_logpdf, PriorSpec};
use crate::dependence::cholesky_with_jitter;
use crate::error::{NpmmError, Result};

/// Conjugate inverse-gamma update for `n` centred terms with sum of squares `ss`.
pub fn inverse_gamma_update(shape: f64, rate: f64, n: usize, ss: f64) -> (f64, f64) {
    (shape + n as f64 / 2.0, rate + ss / 2.0)
}

fn draw_inverse_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters");
    1.0 / g.sample(rng)
}

fn exp_kernel(dist: &DMatrix<f64>, log_range: f64) -> DMatrix<f64> {
    let rho = log_range.exp();
    dist.map(|h| (-h / rho).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StvcField {
    pub mean: f64,
    pub tau2: f64,
    pub nugget: f64,
    pub log_range: f64,
    pub latent: Vec<f64>,
    chol: DMatrix<f64>,
}

impl StvcField {
    /// Starts the latent field at `values` with moment-based variances.
    pub fn new(values: &[f64], dist: &DMatrix<f64>, priors: &PriorSpec) -> Result<Self> {
        let var = if values.len() > 1 {
            crate::stats::variance(values)
        } else {
            0.0
        };
        let tau2 = var.max(1e-2);
        let log_range = priors.log_range_mean;
        Ok(StvcField {
            mean: crate::stats::mean(values),
            tau2,
            nugget: 0.1 * tau2,
            log_range,
            latent: values.to_vec(),
            chol: cholesky_with_jitter(exp_kernel(dist, log_range))?,
        })
    }

    pub fn set_log_range(&mut self, dist: &DMatrix<f64>, log_range: f64) -> Result<()> {
        self.chol = cholesky_with_jitter(exp_kernel(dist, log_range))?;
        self.log_range = log_range;
        Ok(())
    }

    /// `(θ̃ − β1)ᵀ K⁻¹ (θ̃ − β1)` and `log |K|` for the lower factor `l`.
    fn quad_form(&self, l: &DMatrix<f64>) -> (f64, f64) {
        let c = DVector::from_iterator(self.latent.len(), self.latent.iter().map(|x| x - self.mean));
        let y = l.solve_lower_triangular(&c).expect("non-singular factor");
        let log_det = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        (y.norm_squared(), log_det)
    }

    fn latent_logdensity_with(&self, l: &DMatrix<f64>) -> f64 {
        let n = self.latent.len() as f64;
        let (q, log_det) = self.quad_form(l);
        -0.5 * n * (2.0 * std::f64::consts::PI * self.tau2).ln() - 0.5 * log_det - 0.5 * q / self.tau2
    }

    /// Log density of the latent field under its GP prior.
    pub fn latent_logprior(&self) -> f64 {
        self.latent_logdensity_with(&self.chol)
    }

    /// Log density of the site-`s` coefficient given the latent field.
    pub fn site_logprior(&self, s: usize, value: f64) -> f64 {
        normal_logpdf(value, self.latent[s], self.nugget.sqrt())
    }

    pub fn hyper_logprior(&self, priors: &PriorSpec) -> f64 {
        normal_logpdf(self.mean, 0.0, priors.field_mean_sd)
            + inverse_gamma_logpdf(self.tau2, priors.ig_shape, priors.ig_rate)
            + inverse_gamma_logpdf(self.nugget, priors.ig_shape, priors.ig_rate)
            + normal_logpdf(self.log_range, priors.log_range_mean, priors.log_range_sd)
    }

    /// Full conditional of `τ²` as inverse-gamma `(shape, rate)`.
    pub fn tau2_conditional(&self, priors: &PriorSpec) -> (f64, f64) {
        let (q, _) = self.quad_form(&self.chol);
        inverse_gamma_update(priors.ig_shape, priors.ig_rate, self.latent.len(), q)
    }

    /// Full conditional of the nugget variance given the site coefficients.
    pub fn nugget_conditional(&self, values: &[f64], priors: &PriorSpec) -> (f64, f64) {
        let ss: f64 = values
            .iter()
            .zip(&self.latent)
            .map(|(v, m)| (v - m).powi(2))
            .sum();
        inverse_gamma_update(priors.ig_shape, priors.ig_rate, values.len(), ss)
    }

    /// Conjugate sweep: latent field, mean, `τ²`, nugget.
    pub fn gibbs<R: Rng + ?Sized>(&mut self, values: &[f64], priors: &PriorSpec, rng: &mut R) -> Result<()> {
        let n = values.len();
        let ones = DVector::from_element(n, 1.0);
        let l = &self.chol;
        let linv = l
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .ok_or_else(|| NpmmError::Numerical("singular field correlation factor".into()))?;
        let kinv = linv.transpose() * &linv;

        let mut prec = &kinv / self.tau2;
        for i in 0..n {
            prec[(i, i)] += 1.0 / self.nugget;
        }
        let b = &kinv * &ones * (self.mean / self.tau2)
            + DVector::from_column_slice(values) / self.nugget;
        let pl = cholesky_with_jitter(prec)?;
        let m = pl
            .transpose()
            .solve_upper_triangular(&pl.solve_lower_triangular(&b).expect("non-singular"))
            .expect("non-singular");
        let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let dev = pl.transpose().solve_upper_triangular(&z).expect("non-singular");
        self.latent = (m + dev).iter().copied().collect();

        let k1 = &kinv * &ones;
        let prec_b = 1.0 / priors.field_mean_sd.powi(2) + ones.dot(&k1) / self.tau2;
        let mean_b = k1.dot(&DVector::from_column_slice(&self.latent)) / self.tau2 / prec_b;
        self.mean = mean_b + rng.sample::<f64, _>(StandardNormal) / prec_b.sqrt();

        let (a, r) = self.tau2_conditional(priors);
        self.tau2 = draw_inverse_gamma(a, r, rng);
        let (a, r) = self.nugget_conditional(values, priors);
        self.nugget = draw_inverse_gamma(a, r, rng);
        Ok(())
    }

    /// Metropolis step on the log range; returns whether it moved and the
    /// log acceptance ratio.
    pub fn update_range<R: Rng + ?Sized>(
        &mut self,
        dist: &DMatrix<f64>,
        priors: &PriorSpec,
        step: f64,
        rng: &mut R,
    ) -> (bool, f64) {
        let prop = self.log_range + step * rng.sample::<f64, _>(StandardNormal);
        let u: f64 = rng.random();
        let Ok(l_new) = cholesky_with_jitter(exp_kernel(dist, prop)) else {
            return (false, f64::NEG_INFINITY);
        };
        let cur = self.latent_logdensity_with(&self.chol)
            + normal_logpdf(self.log_range, priors.log_range_mean, priors.log_range_sd);
        let new = self.latent_logdensity_with(&l_new)
            + normal_logpdf(prop, priors.log_range_mean, priors.log_range_sd);
        let ratio = new - cur;
        let accept = u.ln() < ratio;
        if accept {
            self.log_range = prop;
            self.chol = l_new;
        }
        (accept, ratio)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn dist3() -> DMatrix<f64> {
        let c = [[0.0, 0.0], [0.3, 0.1], [0.1, 0.5]];
        DMatrix::from_fn(3, 3, |i, j| {
            let a: [f64; 2] = c[i];
            let b: [f64; 2] = c[j];
            (a[0] - b[0]).hypot(a[1] - b[1])
        })
    }

    #[test]
    fn tau2_conditional_matches_closed_form() {
        let d = dist3();
        let p = PriorSpec::default();
        let mut f = StvcField::new(&[1.0, 2.0, 0.5], &d, &p).unwrap();
        f.set_log_range(&d, (0.4f64).ln()).unwrap();
        f.latent = vec![1.3, 0.2, -0.4];
        f.mean = 0.5;
        let k = d.map(|h| (-h / 0.4).exp());
        let kinv = k.try_inverse().unwrap();
        let c = DVector::from_vec(vec![0.8, -0.3, -0.9]);
        let q = (c.transpose() * kinv * &c)[(0, 0)];
        let (a, b) = f.tau2_conditional(&p);
        assert!((a - (0.1 + 1.5)).abs() < 1e-14);
        assert!((b - (0.1 + q / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn vanishing_nugget_pins_latent_to_coefficients() {
        let d = dist3();
        let p = PriorSpec::default();
        let vals = [1.0, 2.0, 0.5];
        let mut f = StvcField::new(&vals, &d, &p).unwrap();
        f.nugget = 1e-12;
        let mut rng = stream_rng(3, 0);
        f.gibbs(&vals, &p, &mut rng).unwrap();
        for (a, b) in f.latent.iter().zip(&vals) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn latent_logprior_matches_dense_density() {
        let d = dist3();
        let p = PriorSpec::default();
        let mut f = StvcField::new(&[1.0, 2.0, 0.5], &d, &p).unwrap();
        f.tau2 = 0.7;
        let k = d.map(|h| (-h / (-2.0f64).exp()).exp()) * 0.7;
        let c = DVector::from_vec(f.latent.iter().map(|x| x - f.mean).collect());
        let q = (c.transpose() * k.clone().try_inverse().unwrap() * &c)[(0, 0)];
        let dense = -1.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * k.determinant().ln() - 0.5 * q;
        assert!((f.latent_logprior() - dense).abs() < 1e-10);
    }
}
