//! Benchmarking binary predictions against gold labels.

mod keyword;
mod metrics;
mod predictions;
mod report;
mod training;

use thiserror::Error;

use crate::domain::ItemId;

pub use keyword::{arabic_letter_folding, keyword_classify, KeywordClassifier, Normalization};
pub use metrics::{classification_metrics, confusion_matrix, ConfusionMatrix, MetricSet};
pub use predictions::{parse_gold_jsonl, GoldSet, PredictionSet};
pub use report::{compare_models, parse_reported_csv, EvaluationReport, ReportRow, RowSource};
pub use training::{parse_training_log, select_epoch, EpochPolicy, TrainingLogEntry};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvaluationError {
    #[error("predictions for '{model}' do not cover the gold set: {} missing, {} extra (missing: {missing:?}, extra: {extra:?})", missing.len(), extra.len())]
    Coverage {
        model: String,
        missing: Vec<ItemId>,
        extra: Vec<ItemId>,
    },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("keyword list is empty")]
    EmptyKeywords,
    #[error("training log is empty")]
    EmptyLog,
    #[error("training log epochs must increase strictly from 1 (found {found} at row {row})")]
    EpochOrder { row: usize, found: u32 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate id '{0}'")]
    DuplicateId(ItemId),
    #[error("score {score} for '{id}' outside [0, 1]")]
    ScoreOutOfRange { id: ItemId, score: f64 },
}
