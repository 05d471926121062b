use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::label::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Metrics {
    pub accuracy: f64,
    pub f1: f64,
}

/// Accuracy and macro-averaged F1 over both classes. A class with no true,
/// predicted, or actual members contributes an F1 of 0.
pub fn compute_metrics(predictions: &[Label], labels: &[Label]) -> Result<Metrics> {
    if predictions.is_empty() {
        return Err(invalid("no predictions to score"));
    }
    if predictions.len() != labels.len() {
        return Err(crate::Error::LengthMismatch { expected: labels.len(), got: predictions.len() });
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    let mut f1_sum = 0.0;
    for class in Label::ALL {
        let tp = predictions.iter().zip(labels).filter(|(p, l)| **p == class && **l == class).count();
        let fp = predictions.iter().zip(labels).filter(|(p, l)| **p == class && **l != class).count();
        let fn_ = predictions.iter().zip(labels).filter(|(p, l)| **p != class && **l == class).count();
        let denom = 2 * tp + fp + fn_;
        if denom > 0 {
            f1_sum += (2 * tp) as f64 / denom as f64;
        }
    }
    Ok(Metrics {
        accuracy: correct as f64 / predictions.len() as f64,
        f1: f1_sum / Label::ALL.len() as f64,
    })
}
