//! Hyperparameter search with early-stopped cross-validation.

pub mod analyze;
pub mod data;
pub mod engine;
pub mod learners;
pub mod metrics;
pub mod optimize;
pub mod searchspace;
pub mod stopping;
