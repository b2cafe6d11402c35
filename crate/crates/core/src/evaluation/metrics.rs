use serde::{Deserialize, Serialize};

use super::{EvaluationError, GoldSet, PredictionSet};
use crate::domain::BinaryLabel;

/// Binary confusion counts, positive class first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, gold: BinaryLabel, predicted: BinaryLabel) {
        match (gold, predicted) {
            (BinaryLabel::Positive, BinaryLabel::Positive) => self.tp += 1,
            (BinaryLabel::Negative, BinaryLabel::Positive) => self.fp += 1,
            (BinaryLabel::Positive, BinaryLabel::Negative) => self.fn_ += 1,
            (BinaryLabel::Negative, BinaryLabel::Negative) => self.tn += 1,
        }
    }
}

/// Counts predictions against gold. The id sets must match exactly.
pub fn confusion_matrix(gold: &GoldSet, predictions: &PredictionSet) -> Result<ConfusionMatrix, EvaluationError> {
    let missing: Vec<_> = gold
        .keys()
        .filter(|id| !predictions.predictions.contains_key(*id))
        .cloned()
        .collect();
    let extra: Vec<_> = predictions
        .predictions
        .keys()
        .filter(|id| !gold.contains_key(*id))
        .cloned()
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(EvaluationError::Coverage {
            model: predictions.model_name.clone(),
            missing,
            extra,
        });
    }
    let mut matrix = ConfusionMatrix::default();
    for (id, g) in gold {
        matrix.record(*g, predictions.predictions[id]);
    }
    Ok(matrix)
}

/// Accuracy plus per-class and macro precision, recall and F1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub matrix: ConfusionMatrix,
    pub accuracy: f64,
    pub precision_pos: f64,
    pub recall_pos: f64,
    pub f1_pos: f64,
    pub precision_neg: f64,
    pub recall_neg: f64,
    pub f1_neg: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    /// Mean of the per-class F1 scores, not the F1 of macro P and R.
    pub f1_macro: f64,
    pub warnings: Vec<String>,
}

fn ratio(num: u64, den: u64, what: &str, warnings: &mut Vec<String>) -> f64 {
    if den == 0 {
        warnings.push(format!("{what}: zero division, reported as 0"));
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn classification_metrics(matrix: &ConfusionMatrix) -> Result<MetricSet, EvaluationError> {
    let n = matrix.total();
    if n == 0 {
        return Err(EvaluationError::EmptyMatrix);
    }
    let ConfusionMatrix { tp, fp, fn_, tn } = *matrix;
    let mut warnings = Vec::new();
    let precision_pos = ratio(tp, tp + fp, "precision (positive)", &mut warnings);
    let recall_pos = ratio(tp, tp + fn_, "recall (positive)", &mut warnings);
    let precision_neg = ratio(tn, tn + fn_, "precision (negative)", &mut warnings);
    let recall_neg = ratio(tn, tn + fp, "recall (negative)", &mut warnings);
    let f1_pos = harmonic(precision_pos, recall_pos);
    let f1_neg = harmonic(precision_neg, recall_neg);
    Ok(MetricSet {
        matrix: *matrix,
        accuracy: (tp + tn) as f64 / n as f64,
        precision_pos,
        recall_pos,
        f1_pos,
        precision_neg,
        recall_neg,
        f1_neg,
        precision_macro: (precision_pos + precision_neg) / 2.0,
        recall_macro: (recall_pos + recall_neg) / 2.0,
        f1_macro: (f1_pos + f1_neg) / 2.0,
        warnings,
    })
}
