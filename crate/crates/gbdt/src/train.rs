use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{GbdtError, Result};
use crate::matrix::DenseMatrix;
use crate::model::{GbdtModel, RoundLog};
use crate::params::GbdtParams;
use crate::tree::{Node, Tree};

const PROB_CLIP: f64 = 1e-7;
const INACTIVE: u32 = u32::MAX;

/// Held-out rows used for early stopping.
#[derive(Debug, Clone, Copy)]
pub struct ValidationSet<'a> {
    pub x: &'a DenseMatrix,
    pub y: &'a [f64],
}

#[inline]
pub fn logistic(margin: f64) -> f64 {
    if margin >= 0.0 {
        1.0 / (1.0 + (-margin).exp())
    } else {
        let e = margin.exp();
        e / (1.0 + e)
    }
}

/// First and second derivative of the log loss with respect to the margin,
/// expressed through the predicted probability.
#[inline]
pub fn logloss_grad_hess(p: f64, y: f64) -> (f64, f64) {
    (p - y, p * (1.0 - p))
}

pub fn logloss(probs: &[f64], y: &[f64]) -> f64 {
    if probs.is_empty() {
        return 0.0;
    }
    let total: f64 = probs
        .iter()
        .zip(y)
        .map(|(&p, &t)| {
            let p = p.clamp(1e-15, 1.0 - 1e-15);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    total / probs.len() as f64
}

fn check_labels(y: &[f64]) -> Result<()> {
    for (row, &value) in y.iter().enumerate() {
        if value != 0.0 && value != 1.0 {
            return Err(GbdtError::InvalidLabel { row, value });
        }
    }
    Ok(())
}

/// Fits a boosted forest to binary labels `y` (1 = positive class).
pub fn train(
    x: &DenseMatrix,
    y: &[f64],
    params: &GbdtParams,
    valid: Option<ValidationSet<'_>>,
) -> Result<GbdtModel> {
    params.validate()?;
    if x.n_rows() == 0 {
        return Err(GbdtError::EmptyDataset);
    }
    if x.n_rows() != y.len() {
        return Err(GbdtError::LengthMismatch { rows: x.n_rows(), labels: y.len() });
    }
    check_labels(y)?;
    if let Some(v) = valid {
        if v.x.n_rows() != v.y.len() {
            return Err(GbdtError::LengthMismatch { rows: v.x.n_rows(), labels: v.y.len() });
        }
        if v.x.n_cols() != x.n_cols() {
            return Err(GbdtError::DimensionMismatch { expected: x.n_cols(), actual: v.x.n_cols() });
        }
        check_labels(v.y)?;
    }

    let n = x.n_rows();
    let positive_rate = y.iter().sum::<f64>() / n as f64;
    let p0 = positive_rate.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    let base_score = (p0 / (1.0 - p0)).ln();

    let mut model = GbdtModel::base_only(base_score, x.n_cols(), params.clone());
    let columns = PresortedColumns::new(x);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut margins = vec![base_score; n];
    let mut valid_margins = valid.map(|v| vec![base_score; v.x.n_rows()]);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];

    let mut best: Option<(usize, f64)> = None;

    for round in 0..params.n_rounds {
        for i in 0..n {
            let (g, h) = logloss_grad_hess(logistic(margins[i]), y[i]);
            grad[i] = g;
            hess[i] = h;
        }

        let rows = sample_rows(n, params.subsample, &mut rng);
        let tree = TreeBuilder::new(x, &columns, &grad, &hess, params).build(&rows);

        for (i, m) in margins.iter_mut().enumerate() {
            *m += tree.predict(x.row(i));
        }
        let train_probs: Vec<f64> = margins.iter().map(|&m| logistic(m)).collect();
        let train_logloss = logloss(&train_probs, y);

        let valid_logloss = match (valid, valid_margins.as_mut()) {
            (Some(v), Some(vm)) => {
                for (i, m) in vm.iter_mut().enumerate() {
                    *m += tree.predict(v.x.row(i));
                }
                let probs: Vec<f64> = vm.iter().map(|&m| logistic(m)).collect();
                Some(logloss(&probs, v.y))
            }
            _ => None,
        };

        model.trees.push(tree);
        model.log.push(RoundLog { round, train_logloss, valid_logloss });

        if let (Some(patience), Some(loss)) = (params.early_stopping_rounds, valid_logloss) {
            match best {
                Some((_, best_loss)) if loss >= best_loss => {}
                _ => best = Some((round, loss)),
            }
            let (best_round, _) = best.expect("set above");
            if round - best_round >= patience {
                model.trees.truncate(best_round + 1);
                model.best_round = Some(best_round);
                break;
            }
        }
    }
    if model.best_round.is_none() {
        if let Some((best_round, _)) = best {
            model.trees.truncate(best_round + 1);
            model.best_round = Some(best_round);
        }
    }
    Ok(model)
}

fn sample_rows(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if fraction >= 1.0 {
        return (0..n).collect();
    }
    let k = ((n as f64 * fraction).round() as usize).clamp(1, n);
    let mut rows = rand::seq::index::sample(rng, n, k).into_vec();
    rows.sort_unstable();
    rows
}

/// Row indices per feature, ordered by (value, row); absent values listed apart.
struct PresortedColumns {
    sorted: Vec<Vec<u32>>,
    missing: Vec<Vec<u32>>,
}

impl PresortedColumns {
    fn new(x: &DenseMatrix) -> Self {
        let mut sorted = Vec::with_capacity(x.n_cols());
        let mut missing = Vec::with_capacity(x.n_cols());
        for f in 0..x.n_cols() {
            let mut present = Vec::with_capacity(x.n_rows());
            let mut absent = Vec::new();
            for r in 0..x.n_rows() {
                if x.get(r, f).is_nan() {
                    absent.push(r as u32);
                } else {
                    present.push(r as u32);
                }
            }
            present.sort_by(|&a, &b| {
                x.get(a as usize, f)
                    .total_cmp(&x.get(b as usize, f))
                    .then(a.cmp(&b))
            });
            sorted.push(present);
            missing.push(absent);
        }
        Self { sorted, missing }
    }
}

#[derive(Debug, Clone, Copy)]
struct SplitCandidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    default_left: bool,
}

#[derive(Debug, Clone)]
struct OpenNode {
    node: usize,
    grad: f64,
    hess: f64,
    count: usize,
    best: Option<SplitCandidate>,
}

/// Per-node running state while scanning one presorted column.
#[derive(Debug, Clone, Copy, Default)]
struct ScanState {
    grad_left: f64,
    hess_left: f64,
    count_left: usize,
    last_value: f64,
    grad_missing: f64,
    hess_missing: f64,
    count_missing: usize,
}

struct TreeBuilder<'a> {
    x: &'a DenseMatrix,
    columns: &'a PresortedColumns,
    grad: &'a [f64],
    hess: &'a [f64],
    params: &'a GbdtParams,
}

impl<'a> TreeBuilder<'a> {
    fn new(
        x: &'a DenseMatrix,
        columns: &'a PresortedColumns,
        grad: &'a [f64],
        hess: &'a [f64],
        params: &'a GbdtParams,
    ) -> Self {
        Self { x, columns, grad, hess, params }
    }

    fn leaf_weight(&self, g: f64, h: f64) -> f64 {
        let denom = h + self.params.lambda;
        if denom <= 0.0 {
            0.0
        } else {
            -g / denom * self.params.eta
        }
    }

    #[inline]
    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.params.lambda)
    }

    /// Grows one tree level by level over the given (ascending) rows.
    fn build(&self, rows: &[usize]) -> Tree {
        let n = self.x.n_rows();
        let mut slot_of_row = vec![INACTIVE; n];
        let mut nodes: Vec<Node> = vec![Node::Leaf { weight: 0.0, cover: 0.0 }];

        let mut root = OpenNode { node: 0, grad: 0.0, hess: 0.0, count: 0, best: None };
        for &r in rows {
            slot_of_row[r] = 0;
            root.grad += self.grad[r];
            root.hess += self.hess[r];
            root.count += 1;
        }
        let mut open = vec![root];

        for depth in 0..=self.params.max_depth {
            if open.is_empty() {
                break;
            }
            if depth < self.params.max_depth {
                self.find_splits(&mut open, &slot_of_row);
            }

            // Materialize this level and route rows to the next one.
            let mut next_open: Vec<OpenNode> = Vec::new();
            let mut child_slots: Vec<Option<(u32, u32, SplitCandidate)>> = vec![None; open.len()];
            for (slot, node) in open.iter().enumerate() {
                let cover = node.count as f64;
                match node.best {
                    Some(split) => {
                        let left = nodes.len();
                        nodes.push(Node::Leaf { weight: 0.0, cover: 0.0 });
                        let right = nodes.len();
                        nodes.push(Node::Leaf { weight: 0.0, cover: 0.0 });
                        nodes[node.node] = Node::Split {
                            feature: split.feature,
                            threshold: split.threshold,
                            default_left: split.default_left,
                            left,
                            right,
                            cover,
                            gain: split.gain,
                        };
                        let l_slot = next_open.len() as u32;
                        next_open.push(OpenNode { node: left, grad: 0.0, hess: 0.0, count: 0, best: None });
                        let r_slot = next_open.len() as u32;
                        next_open.push(OpenNode { node: right, grad: 0.0, hess: 0.0, count: 0, best: None });
                        child_slots[slot] = Some((l_slot, r_slot, split));
                    }
                    None => {
                        nodes[node.node] = Node::Leaf {
                            weight: self.leaf_weight(node.grad, node.hess),
                            cover,
                        };
                    }
                }
            }
            for &r in rows {
                let slot = slot_of_row[r];
                if slot == INACTIVE {
                    continue;
                }
                match child_slots[slot as usize] {
                    None => slot_of_row[r] = INACTIVE,
                    Some((l, rt, split)) => {
                        let v = self.x.get(r, split.feature);
                        let go_left = if v.is_nan() { split.default_left } else { v < split.threshold };
                        let s = if go_left { l } else { rt };
                        slot_of_row[r] = s;
                        let child = &mut next_open[s as usize];
                        child.grad += self.grad[r];
                        child.hess += self.hess[r];
                        child.count += 1;
                    }
                }
            }
            open = next_open;
        }
        Tree { nodes }
    }

    fn find_splits(&self, open: &mut [OpenNode], slot_of_row: &[u32]) {
        let mcw = self.params.min_child_weight;
        let gamma = self.params.gamma;
        let mut state = vec![ScanState::default(); open.len()];

        for f in 0..self.x.n_cols() {
            for s in state.iter_mut() {
                *s = ScanState::default();
            }
            for &r in &self.columns.missing[f] {
                let slot = slot_of_row[r as usize];
                if slot == INACTIVE {
                    continue;
                }
                let s = &mut state[slot as usize];
                s.grad_missing += self.grad[r as usize];
                s.hess_missing += self.hess[r as usize];
                s.count_missing += 1;
            }
            for &r in &self.columns.sorted[f] {
                let r = r as usize;
                let slot = slot_of_row[r];
                if slot == INACTIVE {
                    continue;
                }
                let slot = slot as usize;
                let value = self.x.get(r, f);
                let s = state[slot];
                if s.count_left > 0 && value > s.last_value {
                    let node = &open[slot];
                    let parent = self.score(node.grad, node.hess);
                    let threshold = midpoint(s.last_value, value);
                    let count_right = node.count - s.count_left - s.count_missing;

                    let consider = |gl: f64, hl: f64, default_left: bool, best: &mut Option<SplitCandidate>| {
                        let gr = node.grad - gl;
                        let hr = node.hess - hl;
                        if hl < mcw || hr < mcw {
                            return;
                        }
                        if hl + self.params.lambda <= 0.0 || hr + self.params.lambda <= 0.0 {
                            return;
                        }
                        let gain = 0.5 * (self.score(gl, hl) + self.score(gr, hr) - parent) - gamma;
                        if !(gain > 0.0) {
                            return;
                        }
                        if best.map_or(true, |b| gain > b.gain) {
                            *best = Some(SplitCandidate { gain, feature: f, threshold, default_left });
                        }
                    };

                    let mut best = open[slot].best;
                    if s.count_missing > 0 {
                        consider(s.grad_left + s.grad_missing, s.hess_left + s.hess_missing, true, &mut best);
                        consider(s.grad_left, s.hess_left, false, &mut best);
                    } else {
                        // No absent values here: send future absent values
                        // down the more populated side.
                        let default_left = s.count_left >= count_right;
                        consider(s.grad_left, s.hess_left, default_left, &mut best);
                    }
                    open[slot].best = best;
                }
                let s = &mut state[slot];
                s.grad_left += self.grad[r];
                s.hess_left += self.hess[r];
                s.count_left += 1;
                s.last_value = value;
            }
        }
    }
}

/// A threshold `t` with `a < t <= b`, so `x < t` separates `a` from `b`.
fn midpoint(a: f64, b: f64) -> f64 {
    let t = a / 2.0 + b / 2.0;
    if t > a && t <= b {
        t
    } else {
        b
    }
}
