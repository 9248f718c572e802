//! Classical decision trees and forests over `[0,1]^d`.
//!
//! Routing convention: an input goes to the right child when
//! `x[feature] >= threshold`, so a tie lands on the right.

mod cart;
mod dataset;
mod json;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::scalar::Scalar;

pub use cart::{train_cart, train_forest, CartParams, ForestParams};
pub use dataset::{Dataset, Targets};
pub use json::{forest_from_json, forest_to_json, FOREST_FORMAT, FOREST_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Task {
    Classification { classes: usize },
    Regression,
}

impl Task {
    /// Length of a prediction vector.
    pub fn outputs(&self) -> usize {
        match *self {
            Task::Classification { classes } => classes,
            Task::Regression => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node<T> {
    Split {
        feature: usize,
        threshold: T,
        left: usize,
        right: usize,
    },
    Leaf {
        value: Vec<T>,
        samples: usize,
        /// Padding leaf: unreachable, zero output.
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        inert: bool,
    },
}

/// Binary decision tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree<T> {
    nodes: Vec<Node<T>>,
    n_features: usize,
    n_outputs: usize,
}

/// A leaf together with the comparisons on its root path.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafPath {
    pub node: usize,
    /// `(internal-node position in preorder, went_right)` for every ancestor.
    pub steps: Vec<(usize, bool)>,
}

impl<T: Scalar> DecisionTree<T> {
    pub fn new(nodes: Vec<Node<T>>, n_features: usize, n_outputs: usize) -> Result<Self, ModelError> {
        let tree = Self {
            nodes,
            n_features,
            n_outputs,
        };
        tree.validate()?;
        Ok(tree)
    }

    /// Single-leaf tree.
    pub fn constant(value: Vec<T>, samples: usize, n_features: usize) -> Self {
        let n_outputs = value.len();
        Self {
            nodes: vec![Node::Leaf {
                value,
                samples,
                inert: false,
            }],
            n_features,
            n_outputs,
        }
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    /// Leaf count `K`.
    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        self.leaf_paths().iter().map(|p| p.steps.len()).max().unwrap_or(0)
    }

    /// Checks that the arena is a single binary tree rooted at 0 with
    /// `K - 1` internal nodes, valid feature indices and thresholds in `[0,1]`.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.nodes.is_empty() {
            return Err(ModelError::Structure("tree has no nodes".into()));
        }
        if self.n_outputs == 0 {
            return Err(ModelError::Structure("leaf values must be non-empty".into()));
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if i >= self.nodes.len() {
                return Err(ModelError::Structure(format!("child index {i} out of range")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(ModelError::Structure(format!("node {i} reached twice")));
            }
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if *feature >= self.n_features {
                        return Err(ModelError::field(
                            format!("nodes[{i}].feature"),
                            format!("{feature} >= n_features {}", self.n_features),
                        ));
                    }
                    if !(*threshold >= T::zero() && *threshold <= T::one()) {
                        return Err(ModelError::field(
                            format!("nodes[{i}].threshold"),
                            format!("{threshold} outside [0,1]"),
                        ));
                    }
                    stack.push(*right);
                    stack.push(*left);
                }
                Node::Leaf { value, .. } => {
                    if value.len() != self.n_outputs {
                        return Err(ModelError::field(
                            format!("nodes[{i}].value"),
                            format!("length {} != {}", value.len(), self.n_outputs),
                        ));
                    }
                    if value.iter().any(|v| !v.is_finite()) {
                        return Err(ModelError::field(format!("nodes[{i}].value"), "non-finite"));
                    }
                }
            }
        }
        if let Some(orphan) = seen.iter().position(|s| !s) {
            return Err(ModelError::Structure(format!("node {orphan} unreachable from root")));
        }
        let leaves = self.leaf_count();
        let internal = self.nodes.len() - leaves;
        if internal + 1 != leaves {
            return Err(ModelError::Structure(format!(
                "{leaves} leaves but {internal} internal nodes"
            )));
        }
        Ok(())
    }

    /// Internal node ids in preorder. Position in this list is the
    /// comparison index used by the neural encoding.
    pub fn internal_nodes(&self) -> Vec<usize> {
        self.preorder()
            .into_iter()
            .filter(|&i| matches!(self.nodes[i], Node::Split { .. }))
            .collect()
    }

    /// Leaves in preorder with their root paths.
    pub fn leaf_paths(&self) -> Vec<LeafPath> {
        let internal = self.internal_nodes();
        let mut position = vec![usize::MAX; self.nodes.len()];
        for (k, &i) in internal.iter().enumerate() {
            position[i] = k;
        }
        let mut out = Vec::with_capacity(internal.len() + 1);
        let mut stack = vec![(0usize, Vec::new())];
        while let Some((i, steps)) = stack.pop() {
            match &self.nodes[i] {
                Node::Split { left, right, .. } => {
                    let mut r = steps.clone();
                    r.push((position[i], true));
                    let mut l = steps;
                    l.push((position[i], false));
                    stack.push((*right, r));
                    stack.push((*left, l));
                }
                Node::Leaf { .. } => out.push(LeafPath { node: i, steps }),
            }
        }
        out
    }

    fn preorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            out.push(i);
            if let Node::Split { left, right, .. } = &self.nodes[i] {
                stack.push(*right);
                stack.push(*left);
            }
        }
        out
    }

    /// Node id of the leaf `x` is routed to.
    pub fn leaf_index(&self, x: &[T]) -> Result<usize, ModelError> {
        if x.len() != self.n_features {
            return Err(ModelError::Dimension {
                expected: self.n_features,
                actual: x.len(),
            });
        }
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] >= *threshold { *right } else { *left },
                Node::Leaf { .. } => return Ok(i),
            }
        }
    }

    pub fn predict(&self, x: &[T]) -> Result<&[T], ModelError> {
        let i = self.leaf_index(x)?;
        match &self.nodes[i] {
            Node::Leaf { value, .. } => Ok(value),
            Node::Split { .. } => unreachable!("leaf_index returns leaves"),
        }
    }

    /// True when internal node `i` is a padding comparison: threshold 0 with
    /// an inert left leaf, so every input in `[0,1]^d` goes right.
    pub fn is_sentinel(&self, i: usize) -> bool {
        match &self.nodes[i] {
            Node::Split { threshold, left, .. } => {
                *threshold == T::zero() && matches!(self.nodes[*left], Node::Leaf { inert: true, .. })
            }
            Node::Leaf { .. } => false,
        }
    }

    /// Pads the tree to exactly `k_target` leaves without changing any
    /// prediction on `[0,1]^d`.
    ///
    /// Each padding step replaces a real leaf by a sentinel split
    /// `x[0] >= 0` whose left child is a new inert leaf (never reached,
    /// zero output) and whose right child is the original leaf.
    pub fn pad_to(&self, k_target: usize) -> Result<Self, ModelError> {
        let current = self.leaf_count();
        if k_target < current {
            return Err(ModelError::PadBelow {
                current,
                target: k_target,
            });
        }
        let mut nodes = self.nodes.clone();
        let anchor = self
            .leaf_paths()
            .iter()
            .map(|p| p.node)
            .find(|&i| matches!(nodes[i], Node::Leaf { inert: false, .. }))
            .ok_or_else(|| ModelError::Structure("tree has no real leaf".into()))?;
        let mut slot = anchor;
        for _ in current..k_target {
            let moved = std::mem::replace(
                &mut nodes[slot],
                Node::Split {
                    feature: 0,
                    threshold: T::zero(),
                    left: 0,
                    right: 0,
                },
            );
            let inert = nodes.len();
            nodes.push(Node::Leaf {
                value: vec![T::zero(); self.n_outputs],
                samples: 0,
                inert: true,
            });
            let kept = nodes.len();
            nodes.push(moved);
            if let Node::Split { left, right, .. } = &mut nodes[slot] {
                *left = inert;
                *right = kept;
            }
            slot = kept;
        }
        Self::new(nodes, self.n_features, self.n_outputs)
    }
}

/// Weighted ensemble `y = sum_l alpha_l T_l(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Forest<T> {
    trees: Vec<DecisionTree<T>>,
    weights: Vec<T>,
    task: Task,
    n_features: usize,
}

impl<T: Scalar> Forest<T> {
    /// Forest with uniform weights `1/L`.
    pub fn new(trees: Vec<DecisionTree<T>>, task: Task) -> Result<Self, ModelError> {
        let l = T::from_usize(trees.len().max(1)).unwrap();
        let weights = vec![T::one() / l; trees.len()];
        Self::with_weights(trees, weights, task)
    }

    pub fn with_weights(trees: Vec<DecisionTree<T>>, weights: Vec<T>, task: Task) -> Result<Self, ModelError> {
        if trees.is_empty() {
            return Err(ModelError::Structure("forest has no trees".into()));
        }
        if weights.len() != trees.len() {
            return Err(ModelError::field("weights", format!("{} weights for {} trees", weights.len(), trees.len())));
        }
        if let Some(l) = weights.iter().position(|w| !(*w > T::zero() && w.is_finite())) {
            return Err(ModelError::field(format!("trees[{l}].alpha"), "tree weights must be positive"));
        }
        let n_features = trees[0].n_features();
        for (l, tree) in trees.iter().enumerate() {
            tree.validate()?;
            if tree.n_features() != n_features {
                return Err(ModelError::field(format!("trees[{l}]"), "inconsistent feature count"));
            }
            if tree.n_outputs() != task.outputs() {
                return Err(ModelError::field(
                    format!("trees[{l}]"),
                    format!("{} outputs, task expects {}", tree.n_outputs(), task.outputs()),
                ));
            }
        }
        Ok(Self {
            trees,
            weights,
            task,
            n_features,
        })
    }

    pub fn trees(&self) -> &[DecisionTree<T>] {
        &self.trees
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn max_leaves(&self) -> usize {
        self.trees.iter().map(DecisionTree::leaf_count).max().unwrap_or(1)
    }

    pub fn predict(&self, x: &[T]) -> Result<Vec<T>, ModelError> {
        let mut out = vec![T::zero(); self.task.outputs()];
        for (tree, &w) in self.trees.iter().zip(&self.weights) {
            for (o, &v) in out.iter_mut().zip(tree.predict(x)?) {
                *o += w * v;
            }
        }
        Ok(out)
    }

    /// Argmax class (classification) of [`Forest::predict`].
    pub fn predict_class(&self, x: &[T]) -> Result<usize, ModelError> {
        Ok(argmax(&self.predict(x)?))
    }

    /// Pads every tree to the forest's maximum leaf count (or `k` if larger).
    pub fn padded(&self, k: Option<usize>) -> Result<Self, ModelError> {
        let target = k.unwrap_or(0).max(self.max_leaves());
        let trees = self.trees.iter().map(|t| t.pad_to(target)).collect::<Result<_, _>>()?;
        Self::with_weights(trees, self.weights.clone(), self.task)
    }
}

/// Index of the largest entry; the first one on ties.
pub fn argmax<T: PartialOrd>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Root splits on x0 at 0.5; the right child splits on x1 at 0.25.
    pub(crate) fn three_leaf_tree() -> DecisionTree<f64> {
        DecisionTree::new(
            vec![
                Node::Split { feature: 0, threshold: 0.5, left: 1, right: 2 },
                Node::Leaf { value: vec![1.0, 0.0], samples: 4, inert: false },
                Node::Split { feature: 1, threshold: 0.25, left: 3, right: 4 },
                Node::Leaf { value: vec![0.25, 0.75], samples: 4, inert: false },
                Node::Leaf { value: vec![0.0, 1.0], samples: 2, inert: false },
            ],
            2,
            2,
        )
        .unwrap()
    }

    fn random_points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect()
    }

    #[test]
    fn threshold_ties_route_right() {
        let t = three_leaf_tree();
        assert_eq!(t.predict(&[0.5, 0.0]).unwrap(), &[0.25, 0.75]);
        assert_eq!(t.predict(&[0.4999, 0.9]).unwrap(), &[1.0, 0.0]);
        assert_eq!(t.predict(&[0.9, 0.25]).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn single_leaf_tree_is_constant() {
        let t = DecisionTree::constant(vec![0.3, 0.7], 5, 3);
        for x in random_points(20, 3, 1) {
            assert_eq!(t.predict(&x).unwrap(), &[0.3, 0.7]);
        }
        assert_eq!(t.leaf_count(), 1);
        assert!(t.internal_nodes().is_empty());
    }

    #[test]
    fn structural_validation() {
        let bad = DecisionTree::<f64>::new(
            vec![
                Node::Split { feature: 0, threshold: 0.5, left: 1, right: 1 },
                Node::Leaf { value: vec![1.0], samples: 1, inert: false },
            ],
            1,
            1,
        );
        assert!(matches!(bad, Err(ModelError::Structure(_))));
        let bad_threshold = DecisionTree::<f64>::new(
            vec![
                Node::Split { feature: 0, threshold: 1.5, left: 1, right: 2 },
                Node::Leaf { value: vec![1.0], samples: 1, inert: false },
                Node::Leaf { value: vec![0.0], samples: 1, inert: false },
            ],
            1,
            1,
        );
        match bad_threshold {
            Err(ModelError::Field { field, .. }) => assert_eq!(field, "nodes[0].threshold"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(three_leaf_tree().predict(&[0.1]).is_err());
    }

    #[test]
    fn leaf_paths_follow_preorder() {
        let t = three_leaf_tree();
        let paths = t.leaf_paths();
        assert_eq!(paths.len(), 3);
        assert_eq!(paths[0].steps, vec![(0, false)]);
        assert_eq!(paths[1].steps, vec![(0, true), (1, false)]);
        assert_eq!(paths[2].steps, vec![(0, true), (1, true)]);
    }

    #[test]
    fn padding_preserves_predictions() {
        let t = three_leaf_tree();
        let same = t.pad_to(3).unwrap();
        let padded = t.pad_to(5).unwrap();
        assert_eq!(padded.leaf_count(), 5);
        assert_eq!(padded.internal_nodes().len(), 4);
        for x in random_points(1000, 2, 7) {
            assert_eq!(t.predict(&x).unwrap(), same.predict(&x).unwrap());
            assert_eq!(t.predict(&x).unwrap(), padded.predict(&x).unwrap());
        }
        // exact zeros still route through the sentinel to the real leaf
        assert_eq!(padded.predict(&[0.0, 0.0]).unwrap(), t.predict(&[0.0, 0.0]).unwrap());
        assert_eq!(t.pad_to(2).unwrap_err(), ModelError::PadBelow { current: 3, target: 2 });
        let sentinels = padded.internal_nodes().into_iter().filter(|&i| padded.is_sentinel(i)).count();
        assert_eq!(sentinels, 2);
    }

    #[test]
    fn padding_a_single_leaf() {
        let t = DecisionTree::constant(vec![2.0], 3, 2);
        let p = t.pad_to(4).unwrap();
        assert_eq!(p.leaf_count(), 4);
        assert_eq!(p.predict(&[0.0, 0.3]).unwrap(), &[2.0]);
    }

    #[test]
    fn forest_weighted_sum() {
        let t = three_leaf_tree();
        let one = Forest::new(vec![t.clone()], Task::Classification { classes: 2 }).unwrap();
        let two = Forest::with_weights(vec![t.clone(), t], vec![0.5, 0.5], Task::Classification { classes: 2 }).unwrap();
        for x in random_points(100, 2, 3) {
            assert_eq!(one.predict(&x).unwrap(), two.predict(&x).unwrap());
        }
        assert!(Forest::with_weights(vec![three_leaf_tree()], vec![0.0], Task::Classification { classes: 2 }).is_err());
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
    }
}
