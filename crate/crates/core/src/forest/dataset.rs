use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::Task;
use crate::error::ModelError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Targets<T> {
    Classes { labels: Vec<usize>, classes: usize },
    Values(Vec<T>),
}

/// Feature matrix in `[0,1]^{rows x d}` with labels or regression targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    features: Array2<T>,
    targets: Targets<T>,
    feature_names: Vec<String>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(features: Array2<T>, targets: Targets<T>, feature_names: Vec<String>) -> Result<Self, ModelError> {
        let rows = features.nrows();
        let target_len = match &targets {
            Targets::Classes { labels, classes } => {
                if let Some(bad) = labels.iter().find(|&&l| l >= *classes) {
                    return Err(ModelError::field("labels", format!("label {bad} >= classes {classes}")));
                }
                labels.len()
            }
            Targets::Values(v) => v.len(),
        };
        if target_len != rows {
            return Err(ModelError::field("labels", format!("{target_len} targets for {rows} rows")));
        }
        if feature_names.len() != features.ncols() {
            return Err(ModelError::field(
                "feature_names",
                format!("{} names for {} columns", feature_names.len(), features.ncols()),
            ));
        }
        if let Some(((r, c), v)) = features.indexed_iter().find(|(_, v)| !(**v >= T::zero() && **v <= T::one())) {
            return Err(ModelError::field(format!("features[{r}][{c}]"), format!("{v} outside [0,1]")));
        }
        Ok(Self {
            features,
            targets,
            feature_names,
        })
    }

    /// Classification dataset with default feature names `x0..`.
    pub fn classification(features: Array2<T>, labels: Vec<usize>, classes: usize) -> Result<Self, ModelError> {
        let names = (0..features.ncols()).map(|i| format!("x{i}")).collect();
        Self::new(features, Targets::Classes { labels, classes }, names)
    }

    pub fn regression(features: Array2<T>, values: Vec<T>) -> Result<Self, ModelError> {
        let names = (0..features.ncols()).map(|i| format!("x{i}")).collect();
        Self::new(features, Targets::Values(values), names)
    }

    pub fn features(&self) -> &Array2<T> {
        &self.features
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, T> {
        self.features.row(i)
    }

    pub fn targets(&self) -> &Targets<T> {
        &self.targets
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.rows() == 0
    }

    pub fn task(&self) -> Task {
        match &self.targets {
            Targets::Classes { classes, .. } => Task::Classification { classes: *classes },
            Targets::Values(_) => Task::Regression,
        }
    }

    /// Class labels; `None` for regression data.
    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Classes { labels, .. } => Some(labels),
            Targets::Values(_) => None,
        }
    }

    /// Target of row `i` as an output vector (one-hot for classification).
    pub fn target_vector(&self, i: usize) -> Vec<T> {
        match &self.targets {
            Targets::Classes { labels, classes } => {
                let mut v = vec![T::zero(); *classes];
                v[labels[i]] = T::one();
                v
            }
            Targets::Values(v) => vec![v[i]],
        }
    }

    /// Rows selected by `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let features = self.features.select(ndarray::Axis(0), indices);
        let targets = match &self.targets {
            Targets::Classes { labels, classes } => Targets::Classes {
                labels: indices.iter().map(|&i| labels[i]).collect(),
                classes: *classes,
            },
            Targets::Values(v) => Targets::Values(indices.iter().map(|&i| v[i]).collect()),
        };
        Self {
            features,
            targets,
            feature_names: self.feature_names.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_out_of_range_features() {
        let err = Dataset::classification(array![[0.5, 1.2]], vec![0], 2).unwrap_err();
        assert_eq!(err, ModelError::field("features[0][1]", "1.2 outside [0,1]"));
    }

    #[test]
    fn rejects_bad_labels() {
        assert!(Dataset::classification(array![[0.5]], vec![2], 2).is_err());
        assert!(Dataset::classification(array![[0.5], [0.1]], vec![1], 2).is_err());
    }

    #[test]
    fn subset_and_one_hot() {
        let d = Dataset::classification(array![[0.0], [0.5], [1.0]], vec![0, 1, 1], 2).unwrap();
        let s = d.subset(&[2, 0]);
        assert_eq!(s.labels().unwrap(), &[1, 0]);
        assert_eq!(s.row(0)[0], 1.0);
        assert_eq!(d.target_vector(1), vec![0.0, 1.0]);
    }
}
