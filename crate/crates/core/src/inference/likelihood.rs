use crate::dependence::{DeltaField, SiteSet};
use crate::error::{NpmmError, Result};
use crate::spqr::SurrogateModel;
use crate::stats::{norm_ln_pdf, norm_quantile};
use crate::vecchia::{gaussian_conditional_params, VecchiaStructure};

/// Source of the Vecchia factors `log f_p(u_p | u_N(p); θ₂)`.
pub trait FactorModel {
    fn structure(&self) -> &VecchiaStructure;

    /// Log factor of position `pos` for every year; `u_ord[t]` holds the
    /// ordered scores of year `t`.
    fn factor_logdens(
        &self,
        pos: usize,
        u_ord: &[Vec<f64>],
        rho: f64,
        r: f64,
        deltas: &DeltaField,
    ) -> Vec<f64>;

    /// Errors unless the model was built for these sites.
    fn check_sites(&self, sites: &SiteSet) -> Result<()>;
}

fn same_sites(a: &SiteSet, b: &SiteSet) -> Result<()> {
    if a != b {
        return Err(NpmmError::Incompatible(format!(
            "likelihood model covers {} sites that differ from the {} data sites",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

impl FactorModel for SurrogateModel {
    fn structure(&self) -> &VecchiaStructure {
        &self.structure
    }

    fn factor_logdens(
        &self,
        pos: usize,
        u_ord: &[Vec<f64>],
        rho: f64,
        r: f64,
        deltas: &DeltaField,
    ) -> Vec<f64> {
        SurrogateModel::factor_logdens(self, pos, u_ord, rho, r, deltas)
    }

    fn check_sites(&self, sites: &SiteSet) -> Result<()> {
        same_sites(&self.sites, sites)
    }
}

/// Exact Gaussian-copula factors; ignores the weights, so it is the true
/// likelihood when δ ≡ 0.
#[derive(Debug, Clone)]
pub struct ExactGaussianFactors {
    pub sites: SiteSet,
    pub structure: VecchiaStructure,
    ordered: Vec<[f64; 2]>,
}

impl ExactGaussianFactors {
    pub fn new(sites: SiteSet, structure: VecchiaStructure) -> Self {
        let ordered = structure.ordering.iter().map(|&s| sites.coords[s]).collect();
        ExactGaussianFactors {
            sites,
            structure,
            ordered,
        }
    }
}

impl FactorModel for ExactGaussianFactors {
    fn structure(&self) -> &VecchiaStructure {
        &self.structure
    }

    fn factor_logdens(
        &self,
        pos: usize,
        u_ord: &[Vec<f64>],
        rho: f64,
        r: f64,
        _deltas: &DeltaField,
    ) -> Vec<f64> {
        let nb = &self.structure.neighbors[pos];
        if nb.is_empty() {
            return vec![0.0; u_ord.len()];
        }
        let Ok((w, sd)) = gaussian_conditional_params(&self.ordered, nb, pos, rho, r) else {
            return vec![f64::NEG_INFINITY; u_ord.len()];
        };
        u_ord
            .iter()
            .map(|u| {
                let z = norm_quantile(u[pos]);
                let mean: f64 = nb.iter().zip(&w).map(|(&q, w)| w * norm_quantile(u[q])).sum();
                norm_ln_pdf((z - mean) / sd) - sd.ln() - norm_ln_pdf(z)
            })
            .collect()
    }

    fn check_sites(&self, sites: &SiteSet) -> Result<()> {
        same_sites(&self.sites, sites)
    }
}

/// Every factor is zero: the copula is ignored and only the marginal
/// terms and priors remain.
#[derive(Debug, Clone)]
pub struct FlatFactors {
    pub structure: VecchiaStructure,
}

impl FactorModel for FlatFactors {
    fn structure(&self) -> &VecchiaStructure {
        &self.structure
    }

    fn factor_logdens(
        &self,
        _pos: usize,
        u_ord: &[Vec<f64>],
        _rho: f64,
        _r: f64,
        _deltas: &DeltaField,
    ) -> Vec<f64> {
        vec![0.0; u_ord.len()]
    }

    fn check_sites(&self, sites: &SiteSet) -> Result<()> {
        if sites.len() != self.structure.n_sites() {
            return Err(NpmmError::Incompatible(format!(
                "structure covers {} sites, data has {}",
                self.structure.n_sites(),
                sites.len()
            )));
        }
        Ok(())
    }
}
