//! Binary-classification gradient boosting over dense feature rows.
//!
//! The learner uses the second-order logistic formulation: every round fits
//! one regression tree to per-row gradients and hessians of the log loss,
//! with L2-regularized leaf weights, a split penalty, and learned default
//! directions for absent (`NaN`) feature values. Trained models can be
//! explained per instance with exact tree-SHAP.

mod error;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod params;
pub mod search;
pub mod shap;
mod train;
pub mod tree;

pub use error::{GbdtError, Result};
pub use matrix::DenseMatrix;
pub use model::{GbdtModel, RoundLog};
pub use params::GbdtParams;
pub use shap::{shap_values, ShapExplanation};
pub use train::{logistic, logloss, logloss_grad_hess, train, ValidationSet};
pub use tree::{Node, Tree};
