//! Non-stationary process mixture model for spatial extremes.
//!
//! Annual maxima get GEV margins with covariate-driven locations; the copula
//! mixes a Brown–Resnick max-stable process with a Gaussian process through
//! region- and year-varying weights. The likelihood is replaced by a Vecchia
//! product of neural spline densities trained on simulations, and parameters
//! are sampled by adaptive Metropolis-within-Gibbs.
//!
//! Modules: [`marginal`], [`dependence`], [`vecchia`], [`spqr`],
//! [`inference`], [`tail`] and [`pipeline`], with [`stats`], [`rng`] and
//! [`optim`] as helpers.

pub mod error;
pub mod marginal;
pub mod rng;
pub mod stats;
pub mod dependence;
pub mod vecchia;
pub mod spqr;
pub mod optim;
pub mod inference;
pub mod tail;
pub mod pipeline;

pub use dependence::{DeltaField, DependenceParams, SiteSet};
pub use error::{NpmmError, Result};
pub use inference::{FitData, McmcConfig, PosteriorStore, RunManifest};
pub use marginal::{GevParams, MarginalCoeffs, N_COEFFS, N_COVARIATES};
pub use pipeline::{Config, Dataset};
pub use spqr::{SplineBasis, SurrogateModel};
pub use tail::ChiEstimate;
pub use vecchia::VecchiaStructure;
