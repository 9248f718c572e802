//! Exact three-layer neural encoding of decision trees.
//!
//! For a tree with `K` leaves and `K - 1` comparisons:
//!
//! * comparison layer: `u_k = phi(x[tau_k] - t_k)`;
//! * matching layer: `v = phi(V u + b)` with `V[k', k] = +1/-1` when the
//!   path to leaf `k'` goes right/left at comparison `k`, `0` otherwise, and
//!   `b[k'] = 1/2 - l(k')`;
//! * output layer: `T(x) = W v + beta` with `W[:, k'] = value(k') / 2` and
//!   `beta = sum_k' W[:, k']`, so that the single `+1` of `v` selects the leaf
//!   value exactly.
//!
//! With the sign activation `phi(z) = 2*1[z >= 0] - 1` the network reproduces
//! the tree; `tanh(a z)` and its polynomial approximation give the soft variants.

mod checkpoint;
mod finetune;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::forest::{argmax, DecisionTree, Forest, Task};
use crate::poly::ChebyshevPoly;
use crate::scalar::Scalar;

pub use checkpoint::{nrf_from_json, nrf_to_json, NRF_FORMAT, NRF_VERSION};
pub use finetune::{finetune_last_layer, joint_features, loss_and_gradient, FinetuneParams, JointLayer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Activation<T> {
    /// `phi(z) = +1` if `z >= 0`, else `-1`.
    Hard,
    Tanh { dilatation: f64 },
    Polynomial { poly: ChebyshevPoly<T> },
}

impl<T: Scalar> Activation<T> {
    pub fn apply(&self, z: T) -> T {
        match self {
            Activation::Hard => {
                if z >= T::zero() {
                    T::one()
                } else {
                    -T::one()
                }
            }
            Activation::Tanh { dilatation } => (T::lit(*dilatation) * z).tanh(),
            Activation::Polynomial { poly } => poly.eval_clear(z),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Activation::Hard => "hard".into(),
            Activation::Tanh { dilatation } => format!("tanh(a={dilatation})"),
            Activation::Polynomial { poly } => format!("poly(m={})", poly.degree()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNetwork<T> {
    pub(crate) tau: Vec<usize>,
    pub(crate) thresholds: Vec<T>,
    /// `V`, `K x (K-1)`; rows are leaves, columns comparisons.
    pub(crate) matching: Array2<T>,
    pub(crate) bias: Array1<T>,
    /// `W`, `C x K`.
    pub(crate) output: Array2<T>,
    pub(crate) output_bias: Array1<T>,
    pub(crate) path_lengths: Vec<usize>,
    pub(crate) inert: Vec<bool>,
    pub(crate) normalized: bool,
    pub(crate) n_features: usize,
}

impl<T: Scalar> TreeNetwork<T> {
    /// Builds the network of `tree`. Comparisons follow the preorder of
    /// internal nodes, leaves the preorder of leaves.
    ///
    /// Padding leaves get a zero `V` row, bias `-1/2` and zero output, so their
    /// matching pre-activation is constantly negative. Sentinel comparisons
    /// created by padding carry no weight on any real leaf.
    pub fn from_tree(tree: &DecisionTree<T>) -> Result<Self, ModelError> {
        tree.validate()?;
        let internal = tree.internal_nodes();
        let sentinel: Vec<bool> = internal.iter().map(|&i| tree.is_sentinel(i)).collect();
        let paths = tree.leaf_paths();
        let k = paths.len();
        let c = tree.n_outputs();
        let mut tau = Vec::with_capacity(k - 1);
        let mut thresholds = Vec::with_capacity(k - 1);
        for &i in &internal {
            if let crate::forest::Node::Split { feature, threshold, .. } = tree.nodes()[i] {
                tau.push(feature);
                thresholds.push(threshold);
            }
        }
        let mut matching = Array2::zeros((k, k - 1));
        let mut bias = Array1::zeros(k);
        let mut output = Array2::zeros((c, k));
        let mut path_lengths = vec![0; k];
        let mut inert = vec![false; k];
        let half = T::half();
        for (leaf, path) in paths.iter().enumerate() {
            let crate::forest::Node::Leaf { value, inert: is_inert, .. } = &tree.nodes()[path.node] else {
                unreachable!("leaf paths end at leaves");
            };
            if *is_inert {
                inert[leaf] = true;
                bias[leaf] = -half;
                continue;
            }
            let mut l = 0;
            for &(cmp, right) in &path.steps {
                if sentinel[cmp] {
                    continue;
                }
                matching[[leaf, cmp]] = if right { T::one() } else { -T::one() };
                l += 1;
            }
            path_lengths[leaf] = l;
            bias[leaf] = half - T::from_usize(l).unwrap();
            for (o, &v) in value.iter().enumerate() {
                output[[o, leaf]] = v * half;
            }
        }
        let output_bias = output.sum_axis(ndarray::Axis(1));
        Ok(Self {
            tau,
            thresholds,
            matching,
            bias,
            output,
            output_bias,
            path_lengths,
            inert,
            normalized: false,
            n_features: tree.n_features(),
        })
    }

    pub fn leaf_count(&self) -> usize {
        self.bias.len()
    }

    pub fn outputs(&self) -> usize {
        self.output.nrows()
    }

    pub fn tau(&self) -> &[usize] {
        &self.tau
    }

    pub fn thresholds(&self) -> &[T] {
        &self.thresholds
    }

    pub fn matching(&self) -> &Array2<T> {
        &self.matching
    }

    pub fn bias(&self) -> &Array1<T> {
        &self.bias
    }

    pub fn output_weights(&self) -> &Array2<T> {
        &self.output
    }

    pub fn output_bias(&self) -> &Array1<T> {
        &self.output_bias
    }

    pub fn path_lengths(&self) -> &[usize] {
        &self.path_lengths
    }

    pub fn inert(&self) -> &[bool] {
        &self.inert
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Divides row `k'` of `V` and `b[k']` by `max(1, 2 l(k'))`, mapping the
    /// matching pre-activations into `[-1, 1]`.
    pub fn normalize(&self) -> Result<Self, ModelError> {
        if self.normalized {
            return Err(ModelError::AlreadyNormalized);
        }
        let mut out = self.clone();
        for (leaf, &l) in self.path_lengths.iter().enumerate() {
            let d = T::from_usize((2 * l).max(1)).unwrap();
            out.matching.row_mut(leaf).mapv_inplace(|v| v / d);
            out.bias[leaf] /= d;
        }
        out.normalized = true;
        Ok(out)
    }

    /// Symbolic extremes of each matching pre-activation over `u in [-1,1]^(K-1)`.
    pub fn preactivation_bounds(&self) -> Vec<(T, T)> {
        self.matching
            .rows()
            .into_iter()
            .zip(self.bias.iter())
            .map(|(row, &b)| {
                let r: T = row.iter().map(|v| v.abs()).sum();
                (b - r, b + r)
            })
            .collect()
    }

    fn check_input(&self, x: &[T]) -> Result<(), ModelError> {
        if x.len() != self.n_features {
            return Err(ModelError::Dimension {
                expected: self.n_features,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Comparison-layer pre-activations `x[tau_k] - t_k`.
    pub fn comparison_preactivations(&self, x: &[T]) -> Result<Array1<T>, ModelError> {
        self.check_input(x)?;
        Ok(self.tau.iter().zip(&self.thresholds).map(|(&f, &t)| x[f] - t).collect())
    }

    /// Both layers of pre-activations `(x_tau - t, V u + b)`.
    pub fn preactivations(&self, x: &[T], act: &Activation<T>) -> Result<(Array1<T>, Array1<T>), ModelError> {
        let z1 = self.comparison_preactivations(x)?;
        let u = z1.mapv(|z| act.apply(z));
        let z2 = self.matching.dot(&u) + &self.bias;
        Ok((z1, z2))
    }

    /// Matching-layer outputs `v`.
    pub fn leaf_features(&self, x: &[T], act: &Activation<T>) -> Result<Array1<T>, ModelError> {
        if matches!(act, Activation::Polynomial { .. }) && !self.normalized {
            return Err(ModelError::Range(
                "polynomial activation requires a normalized network".into(),
            ));
        }
        let (_, z2) = self.preactivations(x, act)?;
        Ok(z2.mapv(|z| act.apply(z)))
    }

    pub fn forward(&self, x: &[T], act: &Activation<T>) -> Result<Array1<T>, ModelError> {
        let v = self.leaf_features(x, act)?;
        Ok(self.output.dot(&v) + &self.output_bias)
    }

    pub fn forward_hard(&self, x: &[T]) -> Result<Array1<T>, ModelError> {
        self.forward(x, &Activation::Hard)
    }
}

/// A forest of converted trees sharing one leaf count `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct NrfModel<T> {
    pub(crate) networks: Vec<TreeNetwork<T>>,
    pub(crate) weights: Vec<T>,
    pub(crate) activation: Activation<T>,
    pub(crate) task: Task,
    pub(crate) n_features: usize,
}

impl<T: Scalar> NrfModel<T> {
    /// Pads every tree to the forest's largest leaf count and converts it.
    /// The model starts with the hard activation.
    pub fn from_forest(forest: &Forest<T>) -> Result<Self, ModelError> {
        let padded = forest.padded(None)?;
        let networks = padded
            .trees()
            .iter()
            .map(TreeNetwork::from_tree)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            networks,
            weights: forest.weights().to_vec(),
            activation: Activation::Hard,
            task: forest.task(),
            n_features: forest.n_features(),
        })
    }

    pub fn networks(&self) -> &[TreeNetwork<T>] {
        &self.networks
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn activation(&self) -> &Activation<T> {
        &self.activation
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn tree_count(&self) -> usize {
        self.networks.len()
    }

    /// Shared leaf count `K`.
    pub fn leaf_count(&self) -> usize {
        self.networks[0].leaf_count()
    }

    pub fn outputs(&self) -> usize {
        self.task.outputs()
    }

    pub fn is_normalized(&self) -> bool {
        self.networks.iter().all(TreeNetwork::is_normalized)
    }

    pub fn normalize(&self) -> Result<Self, ModelError> {
        let networks = self
            .networks
            .iter()
            .map(TreeNetwork::normalize)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            networks,
            ..self.clone()
        })
    }

    /// Same model with a different default activation.
    pub fn with_activation(&self, activation: Activation<T>) -> Result<Self, ModelError> {
        if matches!(activation, Activation::Polynomial { .. }) && !self.is_normalized() {
            return Err(ModelError::Range(
                "polynomial activation requires a normalized model".into(),
            ));
        }
        Ok(Self {
            activation,
            ..self.clone()
        })
    }

    /// `sum_l alpha_l T_l(x)` under `act`.
    pub fn forward_with(&self, x: &[T], act: &Activation<T>) -> Result<Vec<T>, ModelError> {
        let mut out = Array1::zeros(self.outputs());
        for (net, &w) in self.networks.iter().zip(&self.weights) {
            out.scaled_add(w, &net.forward(x, act)?);
        }
        Ok(out.to_vec())
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>, ModelError> {
        self.forward_with(x, &self.activation)
    }

    pub fn forward_hard(&self, x: &[T]) -> Result<Vec<T>, ModelError> {
        self.forward_with(x, &Activation::Hard)
    }

    pub fn predict_class_with(&self, x: &[T], act: &Activation<T>) -> Result<usize, ModelError> {
        Ok(argmax(&self.forward_with(x, act)?))
    }

    /// Matching-layer outputs of every tree.
    pub fn leaf_features(&self, x: &[T], act: &Activation<T>) -> Result<Vec<Array1<T>>, ModelError> {
        self.networks.iter().map(|n| n.leaf_features(x, act)).collect()
    }

    /// Convenience for dataset rows.
    pub fn forward_row(&self, x: ArrayView1<'_, T>, act: &Activation<T>) -> Result<Vec<T>, ModelError> {
        match x.as_slice() {
            Some(s) => self.forward_with(s, act),
            None => self.forward_with(&x.to_vec(), act),
        }
    }
}
