//! Inter-rater reliability estimation when variance components differ
//! between groups of ratees.
//!
//! The model is a one-way rater design `y_ij = mu_i + gamma_i + eps_ij`
//! whose mean, between-ratee SD, and residual SD each regress on
//! effect-coded binary covariates. The crate enumerates all ways of
//! switching those regressions on and off (8^K models for K covariates)
//! and supports
//!
//! - maximum-likelihood and REML fits with information-criterion weights
//!   and stepwise selection ([`likelihood`], [`averaging`]),
//! - Bayesian posterior sampling, bridge-sampled marginal likelihoods,
//!   posterior model probabilities, and inclusion Bayes factors
//!   ([`sampler`], [`evidence`]),
//! - WAIC / PSIS-free importance-sampling LOO, pseudo-BMA and stacking
//!   weights, and model-averaged reliability summaries ([`averaging`]),
//! - a simulation harness for factorial method-comparison studies
//!   ([`study`]).
//!
//! Computation is generic over the floating-point type through
//! [`Scalar`]; the aliases at the crate root fix `f64`, which is what the
//! estimation code paths use.

// `!(x > 0)` is used deliberately throughout validation: unlike `x <= 0`
// it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod averaging;
pub mod data;
pub mod error;
pub mod evidence;
pub mod likelihood;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod study;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use model::{
    coordinate_names, enumerate_models, irr, irr_profile, linked_mean, linked_sd, log_prior,
    Component, CovariateSchema, ModelSpec,
};
pub use evidence::{
    bayes_factor, bridge_logml, evidence_label, inclusion_bf, posterior_model_probs,
    BridgeResult, EvidenceLabel, InclusionResult, ModelEvidence, Strength,
};
pub use averaging::{
    average_posterior, bma_mix, frequentist_average, ic_weights, irr_summaries_bayes,
    irr_summaries_bootstrap, loo, marginal_means, pointwise_matrix, predictive_criteria,
    pseudo_bma_weights, select_minimum, stacking_weights, stepwise, waic, AveragedResult,
    IntervalSummary, IrrReport, LooEstimate, MarginalMeansRow, MixedDraws, PredictiveCriteria,
    StepDirection, StepwiseConfig, StepwiseOutcome, WeightMethod, WeightVector,
};

/// [`model::CovariateProfile`] at the default precision.
pub type CovariateProfile = model::CovariateProfile<f64>;
/// [`model::ParameterVector`] at the default precision.
pub type ParameterVector = model::ParameterVector<f64>;
/// [`model::PriorConfig`] at the default precision.
pub type PriorConfig = model::PriorConfig<f64>;
