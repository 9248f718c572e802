//! JSON checkpoint of a converted model, a sibling of the forest format.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Activation, NrfModel, TreeNetwork};
use crate::error::ModelError;
use crate::forest::Task;
use crate::scalar::Scalar;

pub const NRF_FORMAT: &str = "hrf-nrf";
pub const NRF_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NrfDoc<T> {
    format: String,
    version: u32,
    task: Task,
    n_features: usize,
    activation: Activation<T>,
    networks: Vec<NetworkDoc<T>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc<T> {
    alpha: T,
    tau: Vec<usize>,
    thresholds: Vec<T>,
    matching: Vec<Vec<T>>,
    bias: Vec<T>,
    output: Vec<Vec<T>>,
    output_bias: Vec<T>,
    path_lengths: Vec<usize>,
    #[serde(default)]
    inert: Vec<bool>,
    normalized: bool,
}

fn rows<T: Scalar>(m: &Array2<T>) -> Vec<Vec<T>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix<T: Scalar>(rows: Vec<Vec<T>>, shape: (usize, usize), field: String) -> Result<Array2<T>, ModelError> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(ModelError::field(field, format!("expected a {}x{} matrix", shape.0, shape.1)));
    }
    Ok(Array2::from_shape_vec(shape, rows.into_iter().flatten().collect()).expect("shape checked"))
}

pub fn nrf_to_json<T: Scalar>(model: &NrfModel<T>) -> String {
    let doc = NrfDoc {
        format: NRF_FORMAT.into(),
        version: NRF_VERSION,
        task: model.task,
        n_features: model.n_features,
        activation: model.activation.clone(),
        networks: model
            .networks
            .iter()
            .zip(&model.weights)
            .map(|(n, &alpha)| NetworkDoc {
                alpha,
                tau: n.tau.clone(),
                thresholds: n.thresholds.clone(),
                matching: rows(&n.matching),
                bias: n.bias.to_vec(),
                output: rows(&n.output),
                output_bias: n.output_bias.to_vec(),
                path_lengths: n.path_lengths.clone(),
                inert: n.inert.clone(),
                normalized: n.normalized,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("model serializes")
}

pub fn nrf_from_json<T: Scalar>(text: &str) -> Result<NrfModel<T>, ModelError> {
    let doc: NrfDoc<T> = serde_json::from_str(text)?;
    if doc.format != NRF_FORMAT {
        return Err(ModelError::field("format", format!("expected `{NRF_FORMAT}`, got `{}`", doc.format)));
    }
    if doc.version != NRF_VERSION {
        return Err(ModelError::field("version", format!("unsupported version {}", doc.version)));
    }
    if doc.networks.is_empty() {
        return Err(ModelError::field("networks", "must not be empty"));
    }
    let c = doc.task.outputs();
    let k = doc.networks[0].bias.len();
    if k == 0 {
        return Err(ModelError::field("networks[0].bias", "must not be empty"));
    }
    let mut networks = Vec::with_capacity(doc.networks.len());
    let mut weights = Vec::with_capacity(doc.networks.len());
    for (l, n) in doc.networks.into_iter().enumerate() {
        let at = |f: &str| format!("networks[{l}].{f}");
        if n.bias.len() != k {
            return Err(ModelError::field(at("bias"), format!("expected {k} leaves like networks[0]")));
        }
        if n.tau.len() != k - 1 || n.thresholds.len() != k - 1 {
            return Err(ModelError::field(at("tau"), format!("expected {} comparisons", k - 1)));
        }
        if let Some(j) = n.tau.iter().position(|&f| f >= doc.n_features) {
            return Err(ModelError::field(format!("networks[{l}].tau[{j}]"), "feature index out of range"));
        }
        if n.output_bias.len() != c || n.path_lengths.len() != k {
            return Err(ModelError::field(at("output_bias"), "length mismatch"));
        }
        if !(alpha_ok(n.alpha)) {
            return Err(ModelError::field(at("alpha"), "must be positive"));
        }
        let inert = if n.inert.is_empty() { vec![false; k] } else { n.inert };
        if inert.len() != k {
            return Err(ModelError::field(at("inert"), "length mismatch"));
        }
        networks.push(TreeNetwork {
            tau: n.tau,
            thresholds: n.thresholds,
            matching: matrix(n.matching, (k, k - 1), at("matching"))?,
            bias: Array1::from(n.bias),
            output: matrix(n.output, (c, k), at("output"))?,
            output_bias: Array1::from(n.output_bias),
            path_lengths: n.path_lengths,
            inert,
            normalized: n.normalized,
            n_features: doc.n_features,
        });
        weights.push(n.alpha);
    }
    let model = NrfModel {
        networks,
        weights,
        activation: Activation::Hard,
        task: doc.task,
        n_features: doc.n_features,
    };
    model.with_activation(doc.activation)
}

fn alpha_ok<T: Scalar>(a: T) -> bool {
    a > T::zero() && a.is_finite()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{train_forest, Dataset, ForestParams};
    use crate::poly::fit_tanh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Array2::from_shape_fn((300, 3), |_| rng.random::<f64>());
        let y = (0..300).map(|i| usize::from(x[[i, 1]] > x[[i, 2]])).collect();
        let data = Dataset::classification(x, y, 2).unwrap();
        let forest = train_forest(&data, &ForestParams { n_trees: 5, ..Default::default() }, 3).unwrap();
        let model = NrfModel::from_forest(&forest)
            .unwrap()
            .normalize()
            .unwrap()
            .with_activation(Activation::Polynomial { poly: fit_tanh(4.0, 7).unwrap() })
            .unwrap();
        let back: NrfModel<f64> = nrf_from_json(&nrf_to_json(&model)).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn rejects_unnormalized_polynomial_and_bad_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Array2::from_shape_fn((100, 2), |_| rng.random::<f64>());
        let y = (0..100).map(|i| usize::from(x[[i, 0]] > 0.5)).collect();
        let data = Dataset::classification(x, y, 2).unwrap();
        let forest = train_forest(&data, &ForestParams { n_trees: 2, ..Default::default() }, 3).unwrap();
        let model = NrfModel::from_forest(&forest).unwrap();
        let text = nrf_to_json(&model);
        let poly = serde_json::to_string(&Activation::Polynomial { poly: fit_tanh::<f64>(4.0, 3).unwrap() }).unwrap();
        let swapped = text.replacen("\"kind\": \"hard\"", &poly[1..poly.len() - 1], 1);
        assert!(matches!(nrf_from_json::<f64>(&swapped), Err(ModelError::Range(_))));
        let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        doc["networks"][0]["output"] = serde_json::json!([[1.0]]);
        match nrf_from_json::<f64>(&doc.to_string()) {
            Err(ModelError::Field { field, .. }) => assert_eq!(field, "networks[0].output"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
