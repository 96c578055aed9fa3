//! Exact tree-SHAP attribution.
//!
//! Conditional expectations follow the path-dependent convention: when a
//! feature is outside the coalition, a split on it averages both children
//! weighted by training cover. The polynomial-time recursion keeps, for the
//! current root-to-node path, the proportion of coalitions of every size that
//! flow down it, and unwinds a feature when it is split on a second time.

use crate::error::Result;
use crate::model::GbdtModel;
use crate::tree::{Node, Tree};

/// Per-feature contributions in margin (log-odds) space.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapExplanation {
    /// Expected margin over the training distribution.
    pub base_value: f64,
    pub values: Vec<f64>,
}

impl ShapExplanation {
    /// `base_value + sum(values)`; equals the model margin for the explained row.
    pub fn total(&self) -> f64 {
        self.base_value + self.values.iter().sum::<f64>()
    }
}

pub fn shap_values(model: &GbdtModel, x: &[f64]) -> Result<ShapExplanation> {
    model.check_dim(x.len())?;
    let mut values = vec![0.0; model.feature_count];
    let mut base_value = model.base_score;
    for tree in &model.trees {
        base_value += tree.expected_value();
        tree_shap(tree, x, &mut values);
    }
    Ok(ShapExplanation { base_value, values })
}

/// Accumulates one tree's contributions into `phi`.
pub fn tree_shap(tree: &Tree, x: &[f64], phi: &mut [f64]) {
    if tree.nodes[0].is_leaf() {
        return;
    }
    let path = Vec::with_capacity(tree.depth() + 2);
    recurse(tree, x, phi, 0, path, 1.0, 1.0, None);
}

#[derive(Debug, Clone, Copy)]
struct PathElement {
    feature: Option<usize>,
    zero_fraction: f64,
    one_fraction: f64,
    weight: f64,
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    tree: &Tree,
    x: &[f64],
    phi: &mut [f64],
    node: usize,
    mut path: Vec<PathElement>,
    zero_fraction: f64,
    one_fraction: f64,
    feature: Option<usize>,
) {
    extend(&mut path, zero_fraction, one_fraction, feature);
    match tree.nodes[node] {
        Node::Leaf { weight, .. } => {
            for i in 1..path.len() {
                let w = unwound_sum(&path, i);
                let el = path[i];
                let f = el.feature.expect("only the root sentinel lacks a feature");
                phi[f] += w * (el.one_fraction - el.zero_fraction) * weight;
            }
        }
        Node::Split { feature: split_feature, cover, left, right, .. } => {
            let hot = tree.next_node(node, x).expect("split node");
            let cold = if hot == left { right } else { left };
            let hot_zero = tree.nodes[hot].cover() / cover;
            let cold_zero = tree.nodes[cold].cover() / cover;

            let mut incoming_zero = 1.0;
            let mut incoming_one = 1.0;
            if let Some(k) = path.iter().position(|e| e.feature == Some(split_feature)) {
                incoming_zero = path[k].zero_fraction;
                incoming_one = path[k].one_fraction;
                unwind(&mut path, k);
            }
            recurse(
                tree,
                x,
                phi,
                hot,
                path.clone(),
                hot_zero * incoming_zero,
                incoming_one,
                Some(split_feature),
            );
            recurse(tree, x, phi, cold, path, cold_zero * incoming_zero, 0.0, Some(split_feature));
        }
    }
}

fn extend(path: &mut Vec<PathElement>, zero_fraction: f64, one_fraction: f64, feature: Option<usize>) {
    let depth = path.len();
    path.push(PathElement {
        feature,
        zero_fraction,
        one_fraction,
        weight: if depth == 0 { 1.0 } else { 0.0 },
    });
    let d = (depth + 1) as f64;
    for i in (0..depth).rev() {
        path[i + 1].weight += one_fraction * path[i].weight * (i + 1) as f64 / d;
        path[i].weight = zero_fraction * path[i].weight * (depth - i) as f64 / d;
    }
}

fn unwind(path: &mut Vec<PathElement>, index: usize) {
    let depth = path.len() - 1;
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let d = (depth + 1) as f64;
    let mut next_one_portion = path[depth].weight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next_one_portion * d / ((i + 1) as f64 * one);
            next_one_portion = tmp - path[i].weight * zero * (depth - i) as f64 / d;
        } else {
            path[i].weight = path[i].weight * d / (zero * (depth - i) as f64);
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
    path.pop();
}

fn unwound_sum(path: &[PathElement], index: usize) -> f64 {
    let depth = path.len() - 1;
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let d = (depth + 1) as f64;
    let mut next_one_portion = path[depth].weight;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = next_one_portion * d / ((i + 1) as f64 * one);
            total += tmp;
            next_one_portion = path[i].weight - tmp * zero * ((depth - i) as f64 / d);
        } else {
            total += (path[i].weight / zero) / ((depth - i) as f64 / d);
        }
    }
    total
}
