//! Seeded random hyperparameter search scored by validation AUC.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GbdtError, Result};
use crate::matrix::DenseMatrix;
use crate::metrics::auc;
use crate::params::GbdtParams;
use crate::train::{train, ValidationSet};

/// Inclusive sampling ranges. Rates with a positive lower bound are drawn
/// log-uniformly; everything else uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub eta: (f64, f64),
    pub max_depth: (usize, usize),
    pub lambda: (f64, f64),
    pub gamma: (f64, f64),
    pub min_child_weight: (f64, f64),
    pub subsample: (f64, f64),
    pub n_rounds: (usize, usize),
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            eta: (0.03, 0.3),
            max_depth: (2, 8),
            lambda: (0.1, 10.0),
            gamma: (0.0, 1.0),
            min_child_weight: (0.0, 5.0),
            subsample: (0.6, 1.0),
            n_rounds: (30, 200),
        }
    }
}

impl SearchSpace {
    fn validate(&self) -> Result<()> {
        let ok = self.eta.0 > 0.0
            && self.eta.0 <= self.eta.1
            && self.max_depth.0 >= 1
            && self.max_depth.0 <= self.max_depth.1
            && self.lambda.0 >= 0.0
            && self.lambda.0 <= self.lambda.1
            && self.gamma.0 >= 0.0
            && self.gamma.0 <= self.gamma.1
            && self.min_child_weight.0 >= 0.0
            && self.min_child_weight.0 <= self.min_child_weight.1
            && self.subsample.0 > 0.0
            && self.subsample.0 <= self.subsample.1
            && self.subsample.1 <= 1.0
            && self.n_rounds.0 >= 1
            && self.n_rounds.0 <= self.n_rounds.1;
        if ok {
            Ok(())
        } else {
            Err(GbdtError::EmptySearch)
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng, template: &GbdtParams) -> GbdtParams {
        fn real(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
            if lo == hi {
                lo
            } else if lo > 0.0 {
                (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
            } else {
                lo + rng.random::<f64>() * (hi - lo)
            }
        }
        GbdtParams {
            eta: real(rng, self.eta),
            max_depth: rng.random_range(self.max_depth.0..=self.max_depth.1),
            lambda: real(rng, self.lambda),
            gamma: real(rng, self.gamma),
            min_child_weight: real(rng, self.min_child_weight),
            subsample: real(rng, self.subsample),
            n_rounds: rng.random_range(self.n_rounds.0..=self.n_rounds.1),
            ..template.clone()
        }
    }
}

/// How each trial is scored.
#[derive(Debug, Clone, Copy)]
pub enum Evaluation<'a> {
    Holdout(ValidationSet<'a>),
    KFold { k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub params: GbdtParams,
    /// Mean validation AUC; folds with a single class are skipped.
    pub mean_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: GbdtParams,
    pub best_auc: Option<f64>,
    pub trials: Vec<Trial>,
}

/// Trial `i` is the `i`-th draw from a generator seeded with `seed`, so a
/// larger budget only appends trials.
pub fn random_search(
    x: &DenseMatrix,
    y: &[f64],
    space: &SearchSpace,
    template: &GbdtParams,
    evaluation: Evaluation<'_>,
    budget: usize,
    seed: u64,
) -> Result<SearchOutcome> {
    if budget == 0 {
        return Err(GbdtError::EmptySearch);
    }
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let folds = match evaluation {
        Evaluation::KFold { k } => Some(fold_assignment(x.n_rows(), k.max(2), seed)),
        Evaluation::Holdout(_) => None,
    };

    let mut trials = Vec::with_capacity(budget);
    let mut best: Option<(usize, f64)> = None;
    for index in 0..budget {
        let params = space.sample(&mut rng, template);
        let mean_auc = match (evaluation, folds.as_ref()) {
            (Evaluation::Holdout(valid), _) => {
                let model = train(x, y, &params, Some(valid))?;
                auc(&model.predict_proba(valid.x)?, valid.y)
            }
            (Evaluation::KFold { .. }, Some(folds)) => cross_validated_auc(x, y, &params, folds)?,
            (Evaluation::KFold { .. }, None) => unreachable!("folds computed for k-fold"),
        };
        if let Some(a) = mean_auc {
            if best.map_or(true, |(_, b)| a > b) {
                best = Some((index, a));
            }
        }
        trials.push(Trial { index, params, mean_auc });
    }
    let best_index = best.map_or(0, |(i, _)| i);
    Ok(SearchOutcome {
        best: trials[best_index].params.clone(),
        best_auc: best.map(|(_, a)| a),
        trials,
    })
}

fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f01d));
    let mut folds = vec![Vec::new(); k];
    for (pos, row) in order.into_iter().enumerate() {
        folds[pos % k].push(row);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    folds
}

fn cross_validated_auc(
    x: &DenseMatrix,
    y: &[f64],
    params: &GbdtParams,
    folds: &[Vec<usize>],
) -> Result<Option<f64>> {
    let mut scores = Vec::new();
    for (i, held) in folds.iter().enumerate() {
        if held.is_empty() {
            continue;
        }
        let train_rows: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .flat_map(|(_, f)| f.iter().copied())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        if train_rows.is_empty() {
            continue;
        }
        let xt = x.select_rows(&train_rows);
        let yt: Vec<f64> = train_rows.iter().map(|&r| y[r]).collect();
        let xv = x.select_rows(held);
        let yv: Vec<f64> = held.iter().map(|&r| y[r]).collect();
        let model = train(&xt, &yt, params, None)?;
        if let Some(a) = auc(&model.predict_proba(&xv)?, &yv) {
            scores.push(a);
        }
    }
    Ok(if scores.is_empty() {
        None
    } else {
        Some(scores.iter().sum::<f64>() / scores.len() as f64)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (DenseMatrix, Vec<f64>) {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            let v = i as f64;
            rows.push([v, (i % 7) as f64]);
            y.push(if i >= 20 { 1.0 } else { 0.0 });
        }
        (DenseMatrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn budget_one_returns_the_single_sample() {
        let (x, y) = toy();
        let out = random_search(&x, &y, &SearchSpace::default(), &GbdtParams::default(), Evaluation::KFold { k: 3 }, 1, 7)
            .unwrap();
        assert_eq!(out.trials.len(), 1);
        assert_eq!(out.best, out.trials[0].params);
    }

    #[test]
    fn zero_budget_is_an_error() {
        let (x, y) = toy();
        let r = random_search(&x, &y, &SearchSpace::default(), &GbdtParams::default(), Evaluation::KFold { k: 3 }, 0, 7);
        assert!(matches!(r, Err(GbdtError::EmptySearch)));
    }

    #[test]
    fn larger_budget_extends_the_same_trials() {
        let (x, y) = toy();
        let space = SearchSpace { n_rounds: (5, 20), ..Default::default() };
        let small = random_search(&x, &y, &space, &GbdtParams::default(), Evaluation::KFold { k: 3 }, 3, 11).unwrap();
        let large = random_search(&x, &y, &space, &GbdtParams::default(), Evaluation::KFold { k: 3 }, 6, 11).unwrap();
        assert_eq!(small.trials[..], large.trials[..3]);
        assert!(large.best_auc >= small.best_auc);
    }
}
