//! Joint fine-tuning of the output layers.
//!
//! With the first two layers frozen, the forest output is a single linear
//! map `W f + beta` over the concatenated features `f = [alpha_1 v_1 | ... |
//! alpha_L v_L]`, where `W = [W_1 | ... | W_L]` and `beta = sum_l alpha_l beta_l`.
//! That map is trained with mini-batch SGD on softmax cross-entropy against
//! label-smoothed targets.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Activation, NrfModel};
use crate::error::ModelError;
use crate::forest::{Dataset, Task};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneParams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub label_smoothing: f64,
    pub seed: u64,
}

impl Default for FinetuneParams {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 1.0,
            batch_size: 32,
            label_smoothing: 0.1,
            seed: 0,
        }
    }
}

/// The joint last layer: `C x (L K)` weights and `C` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLayer<T> {
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> JointLayer<T> {
    pub fn from_model(model: &NrfModel<T>) -> Self {
        let views: Vec<_> = model.networks.iter().map(|n| n.output.view()).collect();
        let weights = ndarray::concatenate(Axis(1), &views).expect("networks share C");
        let mut bias = Array1::zeros(model.outputs());
        for (net, &w) in model.networks.iter().zip(&model.weights) {
            bias.scaled_add(w, &net.output_bias);
        }
        Self { weights, bias }
    }

    pub fn logits(&self, features: ArrayView2<'_, T>) -> Array2<T> {
        features.dot(&self.weights.t()) + &self.bias
    }
}

/// Rows of `alpha_l`-weighted, concatenated leaf features.
pub fn joint_features<T: Scalar>(
    model: &NrfModel<T>,
    data: &Dataset<T>,
    act: &Activation<T>,
) -> Result<Array2<T>, ModelError> {
    let k = model.leaf_count();
    let mut out = Array2::zeros((data.rows(), model.tree_count() * k));
    for r in 0..data.rows() {
        let x = data.row(r).to_vec();
        for (l, (net, &w)) in model.networks.iter().zip(&model.weights).enumerate() {
            let v = net.leaf_features(&x, act)?;
            out.slice_mut(s![r, l * k..(l + 1) * k]).assign(&(v * w));
        }
    }
    Ok(out)
}

fn smoothed_target<T: Scalar>(label: usize, classes: usize, eps: f64) -> Array1<T> {
    let off = if classes > 1 { eps / (classes - 1) as f64 } else { 0.0 };
    let mut y = Array1::from_elem(classes, T::lit(off));
    y[label] = T::lit(1.0 - eps);
    y
}

fn softmax_rows<T: Scalar>(logits: &mut Array2<T>) {
    for mut row in logits.rows_mut() {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|z| (z - m).exp());
        let sum = row.sum();
        row.mapv_inplace(|p| p / sum);
    }
}

/// Mean smoothed cross-entropy over the rows of `features` and its gradient
/// with respect to the weights and bias.
pub fn loss_and_gradient<T: Scalar>(
    layer: &JointLayer<T>,
    features: ArrayView2<'_, T>,
    labels: &[usize],
    eps: f64,
) -> (T, Array2<T>, Array1<T>) {
    let classes = layer.bias.len();
    let n = T::from_usize(features.nrows()).unwrap();
    let mut probs = layer.logits(features);
    softmax_rows(&mut probs);
    let mut loss = T::zero();
    for (mut row, &label) in probs.rows_mut().into_iter().zip(labels) {
        let y = smoothed_target::<T>(label, classes, eps);
        loss -= row.iter().zip(&y).map(|(&p, &t)| t * p.max(T::min_positive_value()).ln()).sum::<T>();
        row -= &y;
    }
    // probs now holds dL/dlogits per row
    let grad_w = probs.t().dot(&features) / n;
    let grad_b = probs.sum_axis(Axis(0)) / n;
    (loss / n, grad_w, grad_b)
}

/// Fine-tunes the joint output layer under the model's soft activation and
/// writes it back per tree: `W_l` is its block of the joint weights and the
/// change of the joint bias is shared as `delta_beta / sum(alpha)` by every
/// tree. Returns the model and the mean training loss of each epoch.
pub fn finetune_last_layer<T: Scalar>(
    model: &NrfModel<T>,
    train: &Dataset<T>,
    params: &FinetuneParams,
) -> Result<(NrfModel<T>, Vec<f64>), ModelError> {
    let Task::Classification { classes } = model.task else {
        return Err(ModelError::UnsupportedTask("fine-tuning requires classification".into()));
    };
    if matches!(model.activation, Activation::Hard) {
        return Err(ModelError::InvalidParam("fine-tuning requires a soft activation".into()));
    }
    if train.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if params.batch_size == 0 || !(0.0..1.0).contains(&params.label_smoothing) || !params.learning_rate.is_finite() {
        return Err(ModelError::InvalidParam(format!("{params:?}")));
    }
    let labels = train
        .labels()
        .ok_or_else(|| ModelError::UnsupportedTask("training data has no class labels".into()))?;
    if labels.iter().any(|&y| y >= classes) {
        return Err(ModelError::InvalidParam(format!("labels must be below {classes}")));
    }

    let raw = joint_features(model, train, &model.activation)?;
    // Train on standardized features, an exact reparametrization of the
    // same linear map: the raw features are dominated by a common mode
    // (mostly near -alpha) that makes plain SGD ill-conditioned.
    let mean = raw.mean_axis(Axis(0)).expect("non-empty");
    let std = raw.std_axis(Axis(0), T::zero()).mapv(|s| if s > T::epsilon() { s } else { T::one() });
    let features = (&raw - &mean) / &std;
    let init = JointLayer::from_model(model);
    let mut layer = JointLayer {
        weights: &init.weights * &std,
        bias: &init.bias + &init.weights.dot(&mean),
    };
    let start = layer.clone();
    // unit-variance columns: curvature grows with the feature count
    let lr = T::lit(params.learning_rate / features.ncols() as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..train.rows()).collect();
    let mut history = Vec::with_capacity(params.epochs);
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(params.batch_size) {
            let x = features.select(Axis(0), batch);
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (loss, gw, gb) = loss_and_gradient(&layer, x.view(), &y, params.label_smoothing);
            total += loss.as_f64() * batch.len() as f64;
            layer.weights.scaled_add(-lr, &gw);
            layer.bias.scaled_add(-lr, &gb);
        }
        history.push(total / train.rows() as f64);
    }

    // map the update back to raw features
    let dw = (&layer.weights - &start.weights) / &std;
    let db = (&layer.bias - &start.bias) - dw.dot(&mean);
    let k = model.leaf_count();
    let alpha_sum: T = model.weights.iter().copied().sum();
    let mut out = model.clone();
    for (l, net) in out.networks.iter_mut().enumerate() {
        net.output += &dw.slice(s![.., l * k..(l + 1) * k]);
        net.output_bias.scaled_add(T::one() / alpha_sum, &db);
    }
    Ok((out, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{train_forest, CartParams, ForestParams};
    use crate::poly::fit_tanh;
    use rand::Rng;

    fn setup(seed: u64) -> (NrfModel<f64>, Dataset<f64>, Dataset<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 1200;
        let x = Array2::from_shape_fn((n, 3), |_| rng.random::<f64>());
        let y: Vec<usize> = (0..n)
            .map(|i| {
                let c = usize::from((x[[i, 0]] > 0.5) ^ (x[[i, 1]] > 0.5));
                if rng.random::<f64>() < 0.1 { 1 - c } else { c }
            })
            .collect();
        let data = Dataset::classification(x, y, 2).unwrap();
        let train = data.subset(&(0..800).collect::<Vec<_>>());
        let valid = data.subset(&(800..n).collect::<Vec<_>>());
        let p = ForestParams { n_trees: 8, cart: CartParams { max_depth: 4, ..Default::default() }, bootstrap: true };
        let forest = train_forest(&train, &p, seed).unwrap();
        let model = NrfModel::from_forest(&forest)
            .unwrap()
            .normalize()
            .unwrap()
            .with_activation(Activation::Tanh { dilatation: 4.0 })
            .unwrap();
        (model, train, valid)
    }

    fn accuracy(model: &NrfModel<f64>, data: &Dataset<f64>) -> f64 {
        let labels = data.labels().unwrap();
        let hits = (0..data.rows())
            .filter(|&i| model.predict_class_with(&data.row(i).to_vec(), model.activation()).unwrap() == labels[i])
            .count();
        hits as f64 / data.rows() as f64
    }

    #[test]
    fn joint_layer_reproduces_forward() {
        let (model, train, _) = setup(1);
        let layer = JointLayer::from_model(&model);
        let f = joint_features(&model, &train, model.activation()).unwrap();
        let logits = layer.logits(f.view());
        for r in 0..20 {
            let y = model.forward(&train.row(r).to_vec()).unwrap();
            for (a, b) in y.iter().zip(logits.row(r)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    fn finite_difference_check(eps: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, d, n) = (3, 7, 16);
        let layer = JointLayer {
            weights: Array2::from_shape_fn((c, d), |_| rng.random_range(-1.0..1.0)),
            bias: Array1::from_shape_fn(c, |_| rng.random_range(-1.0..1.0)),
        };
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let (_, gw, gb) = loss_and_gradient(&layer, x.view(), &y, eps);
        let h = 1e-5;
        let rel = |num: f64, ana: f64| (num - ana).abs() / num.abs().max(ana.abs()).max(1e-8);
        for i in 0..c {
            for j in 0..d {
                let mut p = layer.clone();
                p.weights[[i, j]] += h;
                let mut m = layer.clone();
                m.weights[[i, j]] -= h;
                let num = (loss_and_gradient(&p, x.view(), &y, eps).0 - loss_and_gradient(&m, x.view(), &y, eps).0) / (2.0 * h);
                assert!(rel(num, gw[[i, j]]) <= 1e-4, "w[{i},{j}]: {num} vs {}", gw[[i, j]]);
            }
            let mut p = layer.clone();
            p.bias[i] += h;
            let mut m = layer.clone();
            m.bias[i] -= h;
            let num = (loss_and_gradient(&p, x.view(), &y, eps).0 - loss_and_gradient(&m, x.view(), &y, eps).0) / (2.0 * h);
            assert!(rel(num, gb[i]) <= 1e-4);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..4 {
            finite_difference_check(0.0, seed);
            finite_difference_check(0.1, seed);
        }
    }

    #[test]
    fn unsmoothed_gradient_is_standard_cross_entropy() {
        let layer = JointLayer { weights: Array2::from_elem((2, 1), 0.0), bias: Array1::from(vec![0.0, 0.0]) };
        let x = Array2::from_elem((1, 1), 1.0);
        let (loss, gw, gb) = loss_and_gradient(&layer, x.view(), &[1], 0.0);
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert_eq!(gb.to_vec(), vec![0.5, -0.5]);
        assert_eq!(gw.column(0).to_vec(), vec![0.5, -0.5]);
    }

    #[test]
    fn zero_learning_rate_keeps_model() {
        let (model, train, _) = setup(2);
        let params = FinetuneParams { epochs: 1, learning_rate: 0.0, ..Default::default() };
        let (tuned, _) = finetune_last_layer(&model, &train, &params).unwrap();
        for (a, b) in tuned.networks().iter().zip(model.networks()) {
            assert_eq!(a.output_weights(), b.output_weights());
        }
        for r in 0..50 {
            let x = train.row(r).to_vec();
            let (a, b) = (tuned.forward(&x).unwrap(), model.forward(&x).unwrap());
            for (p, q) in a.iter().zip(&b) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn finetuning_is_deterministic_and_helps() {
        let (model, train, valid) = setup(3);
        let params = FinetuneParams { epochs: 20, ..Default::default() };
        let (a, hist) = finetune_last_layer(&model, &train, &params).unwrap();
        let (b, _) = finetune_last_layer(&model, &train, &params).unwrap();
        assert_eq!(a, b);
        assert!(hist.last().unwrap() < hist.first().unwrap());
        assert!(accuracy(&a, &valid) >= accuracy(&model, &valid), "{} < {}", accuracy(&a, &valid), accuracy(&model, &valid));
    }

    #[test]
    fn finetune_with_polynomial_activation() {
        let (model, train, _) = setup(4);
        let poly = model.with_activation(Activation::Polynomial { poly: fit_tanh(4.0, 7).unwrap() }).unwrap();
        let (tuned, hist) = finetune_last_layer(&poly, &train, &FinetuneParams { epochs: 5, ..Default::default() }).unwrap();
        assert!(hist.iter().all(|l| l.is_finite()));
        assert_eq!(tuned.tree_count(), poly.tree_count());
    }

    #[test]
    fn rejects_regression_and_hard() {
        let (model, train, _) = setup(5);
        let hard = model.with_activation(Activation::Hard).unwrap();
        assert!(matches!(finetune_last_layer(&hard, &train, &FinetuneParams::default()), Err(ModelError::InvalidParam(_))));
        let mut reg = model.clone();
        reg.task = Task::Regression;
        assert!(matches!(finetune_last_layer(&reg, &train, &FinetuneParams::default()), Err(ModelError::UnsupportedTask(_))));
    }
}
