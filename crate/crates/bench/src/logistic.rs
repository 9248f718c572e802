//! L2-regularized multinomial logistic regression, full-batch gradient
//! descent from zero weights (deterministic).

use hrf_core::forest::argmax;
use hrf_core::Dataset;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::BenchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticParams {
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            iterations: 2000,
            learning_rate: 2.0,
            l2: 1e-5,
        }
    }
}

impl LogisticParams {
    pub fn validate(&self) -> Result<(), BenchError> {
        if !(self.learning_rate > 0.0) || !(self.l2 >= 0.0) || self.iterations == 0 {
            return Err(BenchError::Config(
                "logistic baseline needs iterations > 0, learning_rate > 0, l2 >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// `classes x features`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LogisticModel {
    pub fn zeros(classes: usize, features: usize) -> Self {
        Self {
            weights: Array2::zeros((classes, features)),
            bias: Array1::zeros(classes),
        }
    }

    pub fn logits(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        self.weights.dot(&x) + &self.bias
    }

    pub fn predict(&self, x: ArrayView1<'_, f64>) -> usize {
        argmax(self.logits(x).as_slice().expect("contiguous"))
    }

    pub fn predict_all(&self, data: &Dataset) -> Vec<usize> {
        data.features().rows().into_iter().map(|r| self.predict(r)).collect()
    }
}

fn softmax_rows(mut z: Array2<f64>) -> Array2<f64> {
    for mut row in z.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    z
}

/// Mean cross-entropy plus `l2/2 |W|^2`, and its gradient.
pub fn loss_and_gradient(
    model: &LogisticModel,
    x: ArrayView2<'_, f64>,
    y: &[usize],
    l2: f64,
) -> (f64, Array2<f64>, Array1<f64>) {
    let n = x.nrows() as f64;
    let p = softmax_rows(x.dot(&model.weights.t()) + &model.bias);
    let mut loss = 0.0;
    let mut delta = p;
    for (i, &label) in y.iter().enumerate() {
        loss -= delta[[i, label]].max(1e-300).ln();
        delta[[i, label]] -= 1.0;
    }
    delta /= n;
    let grad_w = delta.t().dot(&x) + &(&model.weights * l2);
    let grad_b = delta.sum_axis(Axis(0));
    let reg = 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>();
    (loss / n + reg, grad_w, grad_b)
}

pub fn fit(train: &Dataset, params: &LogisticParams) -> Result<LogisticModel, BenchError> {
    params.validate()?;
    let Some(labels) = train.labels() else {
        return Err(BenchError::Data("logistic baseline needs classification data".into()));
    };
    let classes = train.task().outputs();
    let mut model = LogisticModel::zeros(classes, train.n_features());
    for _ in 0..params.iterations {
        let (_, gw, gb) = loss_and_gradient(&model, train.features().view(), labels, params.l2);
        model.weights.scaled_add(-params.learning_rate, &gw);
        model.bias.scaled_add(-params.learning_rate, &gb);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separable_data_is_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut x = Array2::zeros((400, 2));
        let mut y = Vec::new();
        for i in 0..400 {
            let (a, b): (f64, f64) = (rng.random(), rng.random());
            x[[i, 0]] = a;
            x[[i, 1]] = b;
            y.push(usize::from(a + 0.5 * b > 0.8));
        }
        let data = Dataset::classification(x, y.clone(), 2).unwrap();
        let model = fit(&data, &LogisticParams::default()).unwrap();
        let acc = model.predict_all(&data).iter().zip(&y).filter(|(p, t)| p == t).count() as f64 / 400.0;
        assert!(acc >= 0.99, "{acc}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = array![[0.1, 0.9, 0.3], [0.7, 0.2, 0.5], [0.4, 0.4, 0.8], [0.9, 0.1, 0.0]];
        let y = [0, 2, 1, 2];
        let mut model = LogisticModel::zeros(3, 3);
        for (i, w) in model.weights.iter_mut().enumerate() {
            *w = (i as f64 * 0.37).sin();
        }
        model.bias = array![0.1, -0.2, 0.3];
        let l2 = 0.05;
        let (_, gw, gb) = loss_and_gradient(&model, x.view(), &y, l2);
        let h = 1e-6;
        let rel = |num: f64, ana: f64| (num - ana).abs() / ana.abs().max(1e-3);
        for idx in [(0, 0), (1, 2), (2, 1)] {
            let mut p = model.clone();
            p.weights[idx] += h;
            let mut m = model.clone();
            m.weights[idx] -= h;
            let num = (loss_and_gradient(&p, x.view(), &y, l2).0 - loss_and_gradient(&m, x.view(), &y, l2).0) / (2.0 * h);
            assert!(rel(num, gw[idx]) < 1e-4);
        }
        for c in 0..3 {
            let mut p = model.clone();
            p.bias[c] += h;
            let mut m = model.clone();
            m.bias[c] -= h;
            let num = (loss_and_gradient(&p, x.view(), &y, l2).0 - loss_and_gradient(&m, x.view(), &y, l2).0) / (2.0 * h);
            assert!(rel(num, gb[c]) < 1e-4);
        }
    }

    #[test]
    fn regression_data_is_rejected() {
        let data = Dataset::regression(Array2::zeros((3, 1)), vec![0.0, 1.0, 0.5]).unwrap();
        assert!(matches!(fit(&data, &LogisticParams::default()), Err(BenchError::Data(_))));
    }
}
