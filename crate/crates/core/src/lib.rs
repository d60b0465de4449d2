//! Additive hazard regression where some regressor functions are modelled
//! parametrically and the rest are left nonparametric.
//!
//! The crate covers the full pipeline: weighted least-squares estimation of
//! the nonparametric model ([`aalen`]), parametric hazard families
//! ([`family`]), full maximum likelihood for all-parametric models ([`mle`]),
//! the two-step criterion/backfit estimator with its joint plug-in
//! covariance ([`partly`]), goodness-of-fit monitoring and tests ([`gof`]),
//! survival-data simulation and Monte Carlo studies ([`sim`]), and
//! closed-form asymptotic efficiency analytics ([`efficiency`]).

pub mod aalen;
pub mod data;
pub mod efficiency;
pub mod error;
pub mod family;
pub mod gof;
pub mod linalg;
pub mod mle;
pub mod partly;
mod risk;
pub mod sim;

pub use aalen::{
    aalen_variance, default_bandwidth, fit_aalen, fit_aalen_optimal, smooth_alpha, AalenFit,
    AalenWeights, SmoothedAlpha, VarianceOption,
};
pub use data::{
    at_risk_moment, build_time_grid, dataset_to_csv, load_dataset, step_path_to_csv, Dataset,
    LoadSchema, StepPath, TauSpec, TimeGrid,
};
pub use efficiency::{
    are_weights, gamma_moments, ineff_backfit, ineff_parametric, limit_theta_variance,
    sieve_information, FPath, GammaSetup, IsoRankOne, SieveInfo, SieveSpec,
};
pub use error::{Error, Result};
pub use family::{evaluate, integrate, CustomFamily, HazardFamily, ParametricBlock};
pub use gof::{
    chi_squared_test, gof_covariance, ks_test, monitoring_process, GofReport, GofTestKind,
    GofWeight, KsMethod, MonitorPath, WindowSpec,
};
pub use mle::{fit_mle, log_likelihood, MleFit};
pub use sim::{
    run_monte_carlo, sample_survival, CensorLaw, CovariateGen, FitColumn, FitSpec, McRow,
    McSummary, MonteCarloTable, Scenario, ScenarioColumn,
};
pub use partly::{
    backfit, criterion, estimate_theta, fit_partly, joint_covariance, survival_curve,
    BackfitWeights, JointCovariance, PartlyFit, PartlyOptions, VnChoice,
};
