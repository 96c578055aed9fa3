/// One node of a regression tree. Children are indices into [`Tree::nodes`].
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        /// Rows with `x[feature] < threshold` go left.
        threshold: f64,
        /// Where absent (`NaN`) values are routed.
        default_left: bool,
        left: usize,
        right: usize,
        /// Number of training rows that reached this node.
        cover: f64,
        gain: f64,
    },
    Leaf {
        weight: f64,
        cover: f64,
    },
}

impl Node {
    pub fn cover(&self) -> f64 {
        match *self {
            Node::Split { cover, .. } | Node::Leaf { cover, .. } => cover,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf { .. })
    }
}

/// Binary regression tree; the root is `nodes[0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(weight: f64, cover: f64) -> Self {
        Self { nodes: vec![Node::Leaf { weight, cover }] }
    }

    /// Child index taken by `row` at split node `idx`.
    #[inline]
    pub fn next_node(&self, idx: usize, row: &[f64]) -> Option<usize> {
        match self.nodes[idx] {
            Node::Leaf { .. } => None,
            Node::Split { feature, threshold, default_left, left, right, .. } => {
                let v = row[feature];
                let go_left = if v.is_nan() { default_left } else { v < threshold };
                Some(if go_left { left } else { right })
            }
        }
    }

    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut idx = 0;
        while let Some(next) = self.next_node(idx, row) {
            idx = next;
        }
        idx
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(row)] {
            Node::Leaf { weight, .. } => weight,
            Node::Split { .. } => unreachable!("leaf_index always ends at a leaf"),
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, idx: usize) -> usize {
            match t.nodes[idx] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(t, left).max(walk(t, right)),
            }
        }
        walk(self, 0)
    }

    /// Cover-weighted mean leaf value: the tree's expected output over the
    /// training distribution.
    pub fn expected_value(&self) -> f64 {
        fn walk(t: &Tree, idx: usize) -> f64 {
            match t.nodes[idx] {
                Node::Leaf { weight, .. } => weight,
                Node::Split { left, right, cover, .. } => {
                    let wl = t.nodes[left].cover() / cover;
                    let wr = t.nodes[right].cover() / cover;
                    wl * walk(t, left) + wr * walk(t, right)
                }
            }
        }
        walk(self, 0)
    }

    /// Checks child indices, covers, and threshold finiteness.
    pub fn validate(&self, feature_count: usize) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("tree has no nodes".into());
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        while let Some(idx) = stack.pop() {
            if std::mem::replace(&mut seen[idx], true) {
                return Err(format!("node {idx} reachable twice"));
            }
            match self.nodes[idx] {
                Node::Leaf { weight, .. } => {
                    if !weight.is_finite() {
                        return Err(format!("leaf {idx} has non-finite weight"));
                    }
                }
                Node::Split { feature, threshold, left, right, cover, .. } => {
                    if feature >= feature_count {
                        return Err(format!("node {idx} splits on feature {feature} >= {feature_count}"));
                    }
                    if !threshold.is_finite() {
                        return Err(format!("node {idx} has non-finite threshold"));
                    }
                    if left >= self.nodes.len() || right >= self.nodes.len() || left == idx || right == idx {
                        return Err(format!("node {idx} has invalid children"));
                    }
                    if !(cover > 0.0) {
                        return Err(format!("node {idx} has non-positive cover"));
                    }
                    stack.push(left);
                    stack.push(right);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err("tree has unreachable nodes".into());
        }
        Ok(())
    }
}
