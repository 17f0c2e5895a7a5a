//! Ordinal neural network transformation models (ONTRAMs) for ordinal outcome
//! prediction and individualized treatment-effect estimation on randomized
//! trial data.
//!
//! * [`model`]: latent-logistic transformation model, probabilities, NLL and
//!   its analytic gradient.
//! * [`preprocess`]: CSV ingestion, k-NN imputation, standardization, dummy
//!   coding and stratified splits.
//! * [`train`]: Adam and the staged clinical → head → fine-tune schedule.
//! * [`effects`]: counterfactual predictions, ITEs, ATEs and odds ratios.
//! * [`metrics`]: AUC, Brier, binary NLL, C-for-Benefit, basic bootstrap CIs
//!   and descriptive summaries.
//! * [`synthetic`]: trial simulator and brute-force reference implementations.

pub mod effects;
pub mod metrics;
pub mod model;
pub mod preprocess;
pub mod synthetic;
pub mod train;

pub use model::{
    latent_cdf, ClassProbabilities, CutpointVector, EmbeddingHead, LinearPredictor, ModelError,
    ModelParams, Observation, OutcomeScale,
};
