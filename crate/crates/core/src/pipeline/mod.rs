//! Data ingestion, climate-model calibration, projections, synthetic data
//! and the command workflow.

mod bias;
pub mod commands;
mod config;
mod data;
mod projection;
mod synthetic;

pub use bias::{bias_correct, correct_gcm_model, log_positive, BiasCorrection, CorrectedModel, ScenarioCovariates};
pub use config::{Config, ModelConfig, ProjectionConfig, Scale, SurrogateConfig};
pub use data::{
    fit_standardization, gcm_block, load_data, read_covariates, read_gcm, read_observations, read_sites,
    region_annual, scale_sites, standardize_block, write_covariates, write_gcm, write_observations, write_sites,
    CovariateTable, Dataset, GcmTable, ObservationTable, SiteRecord, Standardization, COVARIATE_NAMES,
};
pub use projection::{
    analytic_exceedance, draw_coefficients, draw_dependence, independent_exceedance, joint_exceedance,
    project_quantiles, write_exceedance_csv, ExceedanceSummary, ProjectionResult,
};
pub use synthetic::{
    make_climate_fixture, make_synthetic, make_synthetic_at, random_sites, scenario, scenario_covariates,
    ClimateFixture, ClimateSpec, ScenarioTruth, SyntheticData, DEFAULT_R, FIRST_YEAR,
};
