use serde::{Deserialize, Serialize};

use crate::error::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn precision_recall(pred: &[usize], truth: &[usize], class: usize) -> (f64, f64) {
    let tp = pred.iter().zip(truth).filter(|(p, t)| **p == class && **t == class).count();
    let predicted = pred.iter().filter(|p| **p == class).count();
    let actual = truth.iter().filter(|t| **t == class).count();
    (ratio(tp, predicted), ratio(tp, actual))
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Binary problems score class 1 as positive; more classes are
/// macro-averaged.
pub fn classification_metrics(pred: &[usize], truth: &[usize], classes: usize) -> Result<ClassMetrics, BenchError> {
    if pred.len() != truth.len() {
        return Err(BenchError::Data(format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(BenchError::Data("no predictions to score".into()));
    }
    let accuracy = ratio(pred.iter().zip(truth).filter(|(p, t)| p == t).count(), pred.len());
    let (precision, recall, f1) = if classes == 2 {
        let (p, r) = precision_recall(pred, truth, 1);
        (p, r, f1(p, r))
    } else {
        let per: Vec<(f64, f64)> = (0..classes).map(|c| precision_recall(pred, truth, c)).collect();
        let k = classes as f64;
        (
            per.iter().map(|x| x.0).sum::<f64>() / k,
            per.iter().map(|x| x.1).sum::<f64>() / k,
            per.iter().map(|&(p, r)| f1(p, r)).sum::<f64>() / k,
        )
    };
    Ok(ClassMetrics {
        accuracy,
        precision,
        recall,
        f1,
    })
}

/// Fraction of identical predictions.
pub fn agreement(a: &[usize], b: &[usize]) -> Result<f64, BenchError> {
    if a.len() != b.len() {
        return Err(BenchError::Data(format!("agreement of {} and {} predictions", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(BenchError::Data("agreement of empty prediction vectors".into()));
    }
    Ok(ratio(a.iter().zip(b).filter(|(x, y)| x == y).count(), a.len()))
}
