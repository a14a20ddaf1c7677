//! Design and analysis of rerandomized experiments.
//!
//! The crate covers the full pipeline: balance criteria and thresholds,
//! generators of acceptable assignments, difference-in-means, linearly
//! adjusted and doubly robust estimators with their variance and `R²`
//! estimates, the normal/truncated-normal mixture used for confidence
//! intervals, randomization tests, missing-data handling, and a simulation
//! harness that measures precision, coherence, coverage and power.

pub mod assignment;
pub mod balance;
pub mod config;
pub mod distributions;
pub mod error;
pub mod estimators;
pub mod frame;
pub mod io;
pub mod inference;
pub mod models;
pub mod missing;
pub mod moments;
pub mod rng;
pub mod sim;

pub use assignment::{
    complete_randomization, pair_switch_rerandomize, rejection_rerandomize, sample_acceptable_batch, Batch, DrawLog,
};
pub use balance::{
    mahalanobis_distance, quadratic_form_distance, threshold_from_chisq, threshold_monte_carlo, Assignment,
    BalanceCriterion, BalanceEvaluator, CriterionSpec, Metric, ThresholdSource,
};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use estimators::{
    coherence_stat, estimate, phack_min_pvalue, tau_d, tau_dr, tau_l, Diagnostics, EifTable, EstimateReport, Interval,
    Method, ObservedExperiment, PhackResult,
};
pub use frame::{ExperimentFrame, PotentialOutcomes};
pub use inference::{
    confidence_interval, interval_with_quantile, mixture_quantile, randomization_test, sample_l_da, v_da, DesignLaw,
    MixtureSpec, MixtureTable, Statistic, TestResult, TieRule,
};
pub use missing::{augment_missing_indicators, tau_dr_missing_outcomes, MaskedMatrix, ResponseRecord};
pub use models::{ColumnChoice, ForestParams, Learner, ModelKind, OutcomeModel, OutcomeModelSpec};
pub use moments::{column_moments, projection_variance, tau_projection_variance, InverseMode, SampleMoments};

/// Crate version embedded in machine-readable outputs.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
