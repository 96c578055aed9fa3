#![allow(dead_code)]

use nbm_gbdt::{DenseMatrix, Node, Tree};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Four XOR corners, each repeated `copies` times.
pub fn xor_fixture(copies: usize) -> (DenseMatrix, Vec<f64>) {
    let corners = [([0.0, 0.0], 0.0), ([0.0, 1.0], 1.0), ([1.0, 0.0], 1.0), ([1.0, 1.0], 0.0)];
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for _ in 0..copies {
        for (x, label) in corners {
            rows.push(x);
            y.push(label);
        }
    }
    (DenseMatrix::from_rows(&rows).unwrap(), y)
}

/// Random binary tree over `n_features` with depth at most `max_depth`.
/// Covers are consistent (children sum to parent).
pub fn random_tree(rng: &mut ChaCha8Rng, n_features: usize, max_depth: usize) -> Tree {
    fn grow(rng: &mut ChaCha8Rng, nodes: &mut Vec<Node>, n_features: usize, depth_left: usize) -> (usize, f64) {
        let idx = nodes.len();
        nodes.push(Node::Leaf { weight: 0.0, cover: 0.0 });
        if depth_left == 0 || rng.random::<f64>() < 0.2 {
            let cover = rng.random_range(1..20) as f64;
            nodes[idx] = Node::Leaf { weight: rng.random_range(-2.0..2.0), cover };
            return (idx, cover);
        }
        let feature = rng.random_range(0..n_features);
        let threshold = rng.random_range(-1.0..1.0);
        let default_left = rng.random::<bool>();
        let (left, cl) = grow(rng, nodes, n_features, depth_left - 1);
        let (right, cr) = grow(rng, nodes, n_features, depth_left - 1);
        let cover = cl + cr;
        nodes[idx] = Node::Split { feature, threshold, default_left, left, right, cover, gain: 1.0 };
        (idx, cover)
    }
    let mut nodes = Vec::new();
    grow(rng, &mut nodes, n_features, max_depth);
    Tree { nodes }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
