use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};

/// Binary confusion counts with rosacea (label 1) as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn new(tp: usize, tn: usize, fp: usize, fn_: usize) -> Self {
        ConfusionMatrix { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn confusion(predictions: &[Label], labels: &[Label]) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::argument(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (p, y) in predictions.iter().zip(labels) {
        match (y, p) {
            (Label::Positive, Label::Positive) => cm.tp += 1,
            (Label::Negative, Label::Negative) => cm.tn += 1,
            (Label::Negative, Label::Positive) => cm.fp += 1,
            (Label::Positive, Label::Negative) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// Accuracy, recall, precision, F1. A ratio with a zero denominator is
/// `None` rather than 0 or 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let accuracy = ratio(cm.tp + cm.tn, cm.total())
        .ok_or_else(|| Error::argument("cannot score an empty confusion matrix"))?;
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let f1 = match (precision, recall) {
        // P = R = 0 means tp = 0 with errors on both sides; 2TP/(2TP+FP+FN) = 0.
        (Some(p), Some(r)) if p + r == 0.0 => Some(0.0),
        (Some(p), Some(r)) => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    Ok(Metrics {
        accuracy,
        recall,
        precision,
        f1,
    })
}

pub(crate) fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(x) => format!("{x:.digits$}"),
        None => "n/a".to_string(),
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "acc {:.4} rec {} prec {} f1 {}",
            self.accuracy,
            fmt_opt(self.recall, 4),
            fmt_opt(self.precision, 4),
            fmt_opt(self.f1, 4)
        )
    }
}
