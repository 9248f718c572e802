//! Greedy CART trainer (Gini for classification, variance for regression).

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, DecisionTree, Forest, Node, Targets};
use crate::error::ModelError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features sampled per split; `None` uses all features.
    pub features_per_split: Option<usize>,
}

impl Default for CartParams {
    fn default() -> Self {
        Self {
            max_depth: 6,
            min_samples_leaf: 1,
            features_per_split: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub cart: CartParams,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 50,
            cart: CartParams::default(),
            bootstrap: true,
        }
    }
}

pub fn train_cart<T: Scalar>(data: &Dataset<T>, params: &CartParams, seed: u64) -> Result<DecisionTree<T>, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<usize> = (0..data.rows()).collect();
    grow(data, rows, params, &mut rng)
}

/// Random forest: bootstrap resampling plus per-split feature sampling
/// (default `ceil(sqrt(d))` features when the CART params leave it unset).
pub fn train_forest<T: Scalar>(data: &Dataset<T>, params: &ForestParams, seed: u64) -> Result<Forest<T>, ModelError> {
    if params.n_trees == 0 {
        return Err(ModelError::InvalidParam("n_trees must be >= 1".into()));
    }
    let mut cart = params.cart;
    if cart.features_per_split.is_none() {
        cart.features_per_split = Some((data.n_features() as f64).sqrt().ceil() as usize);
    }
    let mut seeder = ChaCha8Rng::seed_from_u64(seed);
    let mut trees = Vec::with_capacity(params.n_trees);
    for _ in 0..params.n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(seeder.random());
        let n = data.rows();
        let rows: Vec<usize> = if params.bootstrap {
            (0..n).map(|_| rng.random_range(0..n.max(1))).collect()
        } else {
            (0..n).collect()
        };
        trees.push(grow(data, rows, &cart, &mut rng)?);
    }
    Forest::new(trees, data.task())
}

fn grow<T: Scalar>(
    data: &Dataset<T>,
    rows: Vec<usize>,
    params: &CartParams,
    rng: &mut ChaCha8Rng,
) -> Result<DecisionTree<T>, ModelError> {
    if data.is_empty() || rows.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if params.max_depth < 1 {
        return Err(ModelError::InvalidParam("max_depth must be >= 1".into()));
    }
    if params.min_samples_leaf < 1 {
        return Err(ModelError::InvalidParam("min_samples_leaf must be >= 1".into()));
    }
    let mut builder = Builder {
        data,
        params,
        nodes: Vec::new(),
    };
    builder.build(rows, 0, rng);
    DecisionTree::new(builder.nodes, data.n_features(), data.task().outputs())
}

struct Builder<'a, T> {
    data: &'a Dataset<T>,
    params: &'a CartParams,
    nodes: Vec<Node<T>>,
}

struct SplitChoice<T> {
    feature: usize,
    threshold: T,
    score: f64,
}

impl<T: Scalar> Builder<'_, T> {
    fn build(&mut self, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        self.nodes.push(self.leaf(&rows));
        if depth >= self.params.max_depth || rows.len() < 2 * self.params.min_samples_leaf || self.is_pure(&rows) {
            return id;
        }
        let Some(split) = self.best_split(&rows, rng) else {
            return id;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| self.data.features()[[r, split.feature]] < split.threshold);
        let left = self.build(left_rows, depth + 1, rng);
        let right = self.build(right_rows, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }

    fn leaf(&self, rows: &[usize]) -> Node<T> {
        let n = rows.len();
        let value = match self.data.targets() {
            Targets::Classes { labels, classes } => {
                let mut counts = vec![0usize; *classes];
                for &r in rows {
                    counts[labels[r]] += 1;
                }
                counts
                    .into_iter()
                    .map(|c| T::from_usize(c).unwrap() / T::from_usize(n).unwrap())
                    .collect()
            }
            Targets::Values(v) => {
                let sum: T = rows.iter().map(|&r| v[r]).sum();
                vec![sum / T::from_usize(n).unwrap()]
            }
        };
        Node::Leaf {
            value,
            samples: n,
            inert: false,
        }
    }

    fn is_pure(&self, rows: &[usize]) -> bool {
        match self.data.targets() {
            Targets::Classes { labels, .. } => rows.iter().all(|&r| labels[r] == labels[rows[0]]),
            Targets::Values(v) => rows.iter().all(|&r| v[r] == v[rows[0]]),
        }
    }

    fn best_split(&self, rows: &[usize], rng: &mut ChaCha8Rng) -> Option<SplitChoice<T>> {
        let d = self.data.n_features();
        let k = self.params.features_per_split.unwrap_or(d).clamp(1, d);
        let mut features = sample(rng, d, k).into_vec();
        features.sort_unstable();
        let mut best: Option<SplitChoice<T>> = None;
        let mut sorted = rows.to_vec();
        for f in features {
            let x = |r: usize| self.data.features()[[r, f]];
            sorted.sort_by(|&a, &b| x(a).partial_cmp(&x(b)).unwrap().then(a.cmp(&b)));
            if let Some(c) = self.scan(&sorted, f) {
                if best.as_ref().is_none_or(|b| c.score > b.score) {
                    best = Some(c);
                }
            }
        }
        best
    }

    /// Sweeps the rows sorted by feature `f`. The score is the criterion's
    /// "between" term; maximizing it minimizes weighted child impurity.
    fn scan(&self, sorted: &[usize], f: usize) -> Option<SplitChoice<T>> {
        let n = sorted.len();
        let min_leaf = self.params.min_samples_leaf;
        let x = |r: usize| self.data.features()[[r, f]];
        let mut best: Option<(usize, f64)> = None;
        match self.data.targets() {
            Targets::Classes { labels, classes } => {
                let mut right = vec![0f64; *classes];
                for &r in sorted {
                    right[labels[r]] += 1.0;
                }
                let mut left = vec![0f64; *classes];
                let mut sq_left = 0.0;
                let mut sq_right: f64 = right.iter().map(|c| c * c).sum();
                for i in 0..n - 1 {
                    let c = labels[sorted[i]];
                    sq_left += 2.0 * left[c] + 1.0;
                    left[c] += 1.0;
                    sq_right -= 2.0 * right[c] - 1.0;
                    right[c] -= 1.0;
                    let nl = i + 1;
                    if nl < min_leaf || n - nl < min_leaf || x(sorted[i]) == x(sorted[i + 1]) {
                        continue;
                    }
                    let score = sq_left / nl as f64 + sq_right / (n - nl) as f64;
                    if best.is_none_or(|(_, s)| score > s) {
                        best = Some((i, score));
                    }
                }
            }
            Targets::Values(v) => {
                let total: f64 = sorted.iter().map(|&r| v[r].as_f64()).sum();
                let mut sum_left = 0.0;
                for i in 0..n - 1 {
                    sum_left += v[sorted[i]].as_f64();
                    let nl = i + 1;
                    if nl < min_leaf || n - nl < min_leaf || x(sorted[i]) == x(sorted[i + 1]) {
                        continue;
                    }
                    let sum_right = total - sum_left;
                    let score = sum_left * sum_left / nl as f64 + sum_right * sum_right / (n - nl) as f64;
                    if best.is_none_or(|(_, s)| score > s) {
                        best = Some((i, score));
                    }
                }
            }
        }
        best.map(|(i, score)| {
            let lo = x(sorted[i]);
            let hi = x(sorted[i + 1]);
            let mut threshold = (lo + hi) * T::half();
            if threshold <= lo {
                threshold = hi;
            }
            SplitChoice {
                feature: f,
                threshold,
                score,
            }
        })
    }
}
