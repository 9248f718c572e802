//! Versioned JSON model format.
//!
//! ```json
//! { "format": "hrf-forest", "version": 1, "n_features": 2,
//!   "task": { "kind": "classification", "classes": 2 },
//!   "trees": [ { "alpha": 1.0, "nodes": [
//!       { "kind": "split", "feature": 0, "threshold": 0.5, "left": 1, "right": 2 },
//!       { "kind": "leaf", "value": [1.0, 0.0], "samples": 3 },
//!       { "kind": "leaf", "value": [0.0, 1.0], "samples": 5 } ] } ] }
//! ```

use serde::{Deserialize, Serialize};

use super::{DecisionTree, Forest, Node, Task};
use crate::error::ModelError;
use crate::scalar::Scalar;

pub const FOREST_FORMAT: &str = "hrf-forest";
pub const FOREST_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ForestDoc<T> {
    format: String,
    version: u32,
    task: Task,
    n_features: usize,
    trees: Vec<TreeDoc<T>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeDoc<T> {
    alpha: T,
    nodes: Vec<Node<T>>,
}

pub fn forest_to_json<T: Scalar>(forest: &Forest<T>) -> String {
    let doc = ForestDoc {
        format: FOREST_FORMAT.to_string(),
        version: FOREST_VERSION,
        task: forest.task(),
        n_features: forest.n_features(),
        trees: forest
            .trees()
            .iter()
            .zip(forest.weights())
            .map(|(t, &alpha)| TreeDoc {
                alpha,
                nodes: t.nodes().to_vec(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("forest serializes")
}

pub fn forest_from_json<T: Scalar>(text: &str) -> Result<Forest<T>, ModelError> {
    let doc: ForestDoc<T> = serde_json::from_str(text)?;
    if doc.format != FOREST_FORMAT {
        return Err(ModelError::field("format", format!("expected `{FOREST_FORMAT}`, got `{}`", doc.format)));
    }
    if doc.version != FOREST_VERSION {
        return Err(ModelError::field("version", format!("unsupported version {}", doc.version)));
    }
    if let Task::Classification { classes: 0 } = doc.task {
        return Err(ModelError::field("task.classes", "must be >= 1"));
    }
    let mut trees = Vec::with_capacity(doc.trees.len());
    let mut weights = Vec::with_capacity(doc.trees.len());
    for (l, t) in doc.trees.into_iter().enumerate() {
        let tree = DecisionTree::new(t.nodes, doc.n_features, doc.task.outputs()).map_err(|e| prefix(e, l))?;
        trees.push(tree);
        weights.push(t.alpha);
    }
    Forest::with_weights(trees, weights, doc.task)
}

fn prefix(e: ModelError, tree: usize) -> ModelError {
    match e {
        ModelError::Field { field, message } => ModelError::Field {
            field: format!("trees[{tree}].{field}"),
            message,
        },
        ModelError::Structure(m) => ModelError::Structure(format!("trees[{tree}]: {m}")),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{train_forest, Dataset, ForestParams};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TWO_LEAF: &str = r#"{
      "format": "hrf-forest", "version": 1, "n_features": 2,
      "task": { "kind": "classification", "classes": 2 },
      "trees": [ { "alpha": 1.0, "nodes": [
        { "kind": "split", "feature": 1, "threshold": 0.4, "left": 1, "right": 2 },
        { "kind": "leaf", "value": [0.75, 0.25], "samples": 4 },
        { "kind": "leaf", "value": [0.2, 0.8], "samples": 5 } ] } ]
    }"#;

    #[test]
    fn hand_written_two_leaf_tree() {
        let f: Forest<f64> = forest_from_json(TWO_LEAF).unwrap();
        assert_eq!(f.predict(&[0.9, 0.1]).unwrap(), vec![0.75, 0.25]);
        assert_eq!(f.predict(&[0.0, 0.4]).unwrap(), vec![0.2, 0.8]);
        assert_eq!(f.predict_class(&[0.0, 0.39]).unwrap(), 0);
    }

    #[test]
    fn threshold_out_of_range_names_the_field() {
        let bad = TWO_LEAF.replace("0.4,", "1.5,");
        match forest_from_json::<f64>(&bad) {
            Err(ModelError::Field { field, .. }) => assert_eq!(field, "trees[0].nodes[0].threshold"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_position() {
        let bad = TWO_LEAF.replace("\"samples\": 5", "\"samples\": \"five\"");
        match forest_from_json::<f64>(&bad) {
            Err(ModelError::Schema { line, .. }) => assert!(line > 1),
            other => panic!("unexpected {other:?}"),
        }
        let wrong = TWO_LEAF.replace("\"version\": 1", "\"version\": 7");
        assert!(matches!(forest_from_json::<f64>(&wrong), Err(ModelError::Field { .. })));
    }

    #[test]
    fn roundtrip_predicts_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((200, 3), |_| rng.random::<f64>());
        let y = (0..200).map(|i| usize::from(x[[i, 0]] + x[[i, 2]] > 1.0)).collect();
        let data = Dataset::classification(x, y, 2).unwrap();
        let forest = train_forest(&data, &ForestParams { n_trees: 7, ..Default::default() }, 1).unwrap();
        let back: Forest<f64> = forest_from_json(&forest_to_json(&forest)).unwrap();
        assert_eq!(back, forest);
        for _ in 0..1000 {
            let p: Vec<f64> = (0..3).map(|_| rng.random()).collect();
            assert_eq!(forest.predict(&p).unwrap(), back.predict(&p).unwrap());
        }
    }
}
