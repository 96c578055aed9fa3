use serde::{Deserialize, Serialize};

use crate::error::{GbdtError, Result};

/// Booster hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtParams {
    /// Shrinkage applied to every leaf weight.
    pub eta: f64,
    pub max_depth: usize,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Minimum loss reduction required to keep a split.
    pub gamma: f64,
    pub n_rounds: usize,
    /// Minimum hessian sum in each child of a split.
    pub min_child_weight: f64,
    /// Row fraction sampled (without replacement) per round.
    pub subsample: f64,
    pub early_stopping_rounds: Option<usize>,
    pub seed: u64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            eta: 0.1,
            max_depth: 6,
            lambda: 1.0,
            gamma: 0.0,
            n_rounds: 100,
            min_child_weight: 1.0,
            subsample: 1.0,
            early_stopping_rounds: None,
            seed: 0,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<()> {
        fn bad(name: &'static str, reason: impl Into<String>) -> Result<()> {
            Err(GbdtError::InvalidParam { name, reason: reason.into() })
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return bad("eta", format!("must be > 0, got {}", self.eta));
        }
        if self.max_depth < 1 {
            return bad("max_depth", "must be >= 1");
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad("lambda", format!("must be >= 0, got {}", self.lambda));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return bad("gamma", format!("must be >= 0, got {}", self.gamma));
        }
        if self.n_rounds < 1 {
            return bad("n_rounds", "must be >= 1");
        }
        if !(self.min_child_weight.is_finite() && self.min_child_weight >= 0.0) {
            return bad("min_child_weight", format!("must be >= 0, got {}", self.min_child_weight));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample", format!("must be in (0, 1], got {}", self.subsample));
        }
        if self.early_stopping_rounds == Some(0) {
            return bad("early_stopping_rounds", "must be >= 1 when set");
        }
        Ok(())
    }
}
