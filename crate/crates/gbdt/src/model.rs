use serde::{Deserialize, Serialize};

use crate::error::{GbdtError, Result};
use crate::matrix::DenseMatrix;
use crate::params::GbdtParams;
use crate::train::logistic;
use crate::tree::{Node, Tree};

pub const MODEL_FORMAT: &str = "nbm-gbdt/1";

/// Per-round training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub train_logloss: f64,
    pub valid_logloss: Option<f64>,
}

/// A trained forest. `margin(x) = base_score + sum of tree outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct GbdtModel {
    pub trees: Vec<Tree>,
    /// Prior log-odds.
    pub base_score: f64,
    pub feature_count: usize,
    /// Column manifest; empty or `feature_count` long.
    pub feature_names: Vec<String>,
    pub params: GbdtParams,
    pub log: Vec<RoundLog>,
    /// Set when early stopping truncated the forest.
    pub best_round: Option<usize>,
}

impl GbdtModel {
    pub fn base_only(base_score: f64, feature_count: usize, params: GbdtParams) -> Self {
        Self {
            trees: Vec::new(),
            base_score,
            feature_count,
            feature_names: Vec::new(),
            params,
            log: Vec::new(),
            best_round: None,
        }
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.feature_count {
            return Err(GbdtError::DimensionMismatch {
                expected: self.feature_count,
                actual: names.len(),
            });
        }
        self.feature_names = names;
        Ok(self)
    }

    pub fn margin(&self, row: &[f64]) -> f64 {
        self.margin_with_trees(row, self.trees.len())
    }

    /// Margin using only the first `n_trees` trees.
    pub fn margin_with_trees(&self, row: &[f64], n_trees: usize) -> f64 {
        self.trees
            .iter()
            .take(n_trees)
            .fold(self.base_score, |acc, t| acc + t.predict(row))
    }

    pub fn predict_row(&self, row: &[f64]) -> Result<f64> {
        self.check_dim(row.len())?;
        Ok(logistic(self.margin(row)))
    }

    /// Row-aligned probabilities of the positive class.
    pub fn predict_proba(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        self.check_dim(x.n_cols())?;
        Ok(x.rows().map(|r| logistic(self.margin(r))).collect())
    }

    pub fn predict_margin(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        self.check_dim(x.n_cols())?;
        Ok(x.rows().map(|r| self.margin(r)).collect())
    }

    pub(crate) fn check_dim(&self, actual: usize) -> Result<()> {
        if actual != self.feature_count {
            return Err(GbdtError::DimensionMismatch { expected: self.feature_count, actual });
        }
        Ok(())
    }

    /// Copy of the model keeping only the first `n_trees` trees.
    pub fn truncated(&self, n_trees: usize) -> Self {
        let mut m = self.clone();
        m.trees.truncate(n_trees);
        m
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelRepr::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let repr: ModelRepr = serde_json::from_str(s)?;
        repr.try_into()
    }
}

// Floats are stored as shortest round-trip decimal strings so that a
// save/load cycle is bit-exact.
fn fstr(v: f64) -> String {
    format!("{v:?}")
}

fn fparse(s: &str, what: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| GbdtError::MalformedModel(format!("cannot parse {what} `{s}`")))
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    format: String,
    base_score: String,
    feature_count: usize,
    feature_names: Vec<String>,
    params: GbdtParams,
    best_round: Option<usize>,
    log: Vec<RoundLog>,
    trees: Vec<Vec<NodeRepr>>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum NodeRepr {
    Split {
        feature: usize,
        threshold: String,
        default_left: bool,
        left: usize,
        right: usize,
        cover: String,
        gain: String,
    },
    Leaf {
        weight: String,
        cover: String,
    },
}

impl From<&GbdtModel> for ModelRepr {
    fn from(m: &GbdtModel) -> Self {
        let trees = m
            .trees
            .iter()
            .map(|t| {
                t.nodes
                    .iter()
                    .map(|n| match *n {
                        Node::Split { feature, threshold, default_left, left, right, cover, gain } => {
                            NodeRepr::Split {
                                feature,
                                threshold: fstr(threshold),
                                default_left,
                                left,
                                right,
                                cover: fstr(cover),
                                gain: fstr(gain),
                            }
                        }
                        Node::Leaf { weight, cover } => {
                            NodeRepr::Leaf { weight: fstr(weight), cover: fstr(cover) }
                        }
                    })
                    .collect()
            })
            .collect();
        ModelRepr {
            format: MODEL_FORMAT.to_string(),
            base_score: fstr(m.base_score),
            feature_count: m.feature_count,
            feature_names: m.feature_names.clone(),
            params: m.params.clone(),
            best_round: m.best_round,
            log: m.log.clone(),
            trees,
        }
    }
}

impl TryFrom<ModelRepr> for GbdtModel {
    type Error = GbdtError;

    fn try_from(r: ModelRepr) -> Result<Self> {
        if r.format != MODEL_FORMAT {
            return Err(GbdtError::MalformedModel(format!(
                "unsupported format `{}` (expected `{MODEL_FORMAT}`)",
                r.format
            )));
        }
        if !r.feature_names.is_empty() && r.feature_names.len() != r.feature_count {
            return Err(GbdtError::MalformedModel("feature manifest length mismatch".into()));
        }
        let mut trees = Vec::with_capacity(r.trees.len());
        for (ti, nodes) in r.trees.into_iter().enumerate() {
            let mut out = Vec::with_capacity(nodes.len());
            for n in nodes {
                out.push(match n {
                    NodeRepr::Split { feature, threshold, default_left, left, right, cover, gain } => {
                        Node::Split {
                            feature,
                            threshold: fparse(&threshold, "threshold")?,
                            default_left,
                            left,
                            right,
                            cover: fparse(&cover, "cover")?,
                            gain: fparse(&gain, "gain")?,
                        }
                    }
                    NodeRepr::Leaf { weight, cover } => Node::Leaf {
                        weight: fparse(&weight, "weight")?,
                        cover: fparse(&cover, "cover")?,
                    },
                });
            }
            let tree = Tree { nodes: out };
            tree.validate(r.feature_count)
                .map_err(|e| GbdtError::MalformedModel(format!("tree {ti}: {e}")))?;
            trees.push(tree);
        }
        Ok(GbdtModel {
            trees,
            base_score: fparse(&r.base_score, "base_score")?,
            feature_count: r.feature_count,
            feature_names: r.feature_names,
            params: r.params,
            log: r.log,
            best_round: r.best_round,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_forest_with_zero_base_predicts_half() {
        let m = GbdtModel::base_only(0.0, 2, GbdtParams::default());
        assert_eq!(m.predict_row(&[1.0, 2.0]).unwrap(), 0.5);
    }

    #[test]
    fn single_leaf_adds_weight_to_base() {
        let mut m = GbdtModel::base_only(0.3, 1, GbdtParams::default());
        m.trees.push(Tree::leaf(-0.8, 10.0));
        let p = m.predict_row(&[0.0]).unwrap();
        assert_eq!(p, logistic(0.3 + -0.8));
    }

    #[test]
    fn dimension_is_checked() {
        let m = GbdtModel::base_only(0.0, 3, GbdtParams::default());
        assert!(matches!(
            m.predict_row(&[1.0]),
            Err(GbdtError::DimensionMismatch { expected: 3, actual: 1 })
        ));
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mut m = GbdtModel::base_only(-0.123456789012345678, 2, GbdtParams::default());
        m.trees.push(Tree {
            nodes: vec![
                Node::Split {
                    feature: 1,
                    threshold: 1.0 / 3.0,
                    default_left: true,
                    left: 1,
                    right: 2,
                    cover: 7.0,
                    gain: 0.1 + 0.2,
                },
                Node::Leaf { weight: 1e-300, cover: 3.0 },
                Node::Leaf { weight: -std::f64::consts::PI, cover: 4.0 },
            ],
        });
        let m = m.with_feature_names(vec!["a".into(), "b".into()]).unwrap();
        let back = GbdtModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), m.to_json().unwrap());
    }

    #[test]
    fn rejects_foreign_format() {
        let m = GbdtModel::base_only(0.0, 1, GbdtParams::default());
        let s = m.to_json().unwrap().replace(MODEL_FORMAT, "other/9");
        assert!(GbdtModel::from_json(&s).is_err());
    }
}
