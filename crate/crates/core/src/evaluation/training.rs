//! Training-log parsing and epoch selection.

use serde::{Deserialize, Serialize};

use super::EvaluationError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLogEntry {
    pub epoch: u32,
    pub training_loss: f64,
    pub validation_loss: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpochPolicy {
    MinValLoss,
    MaxF1,
    /// Stop at the first epoch where validation loss rises while F1 falls,
    /// keeping the epoch before it.
    Trajectory,
}

const COLUMNS: [&str; 7] = [
    "epoch",
    "training loss",
    "validation loss",
    "accuracy",
    "precision",
    "recall",
    "f1",
];

fn header_key(raw: &str) -> String {
    raw.trim().to_ascii_lowercase().replace(['_', '-'], " ")
}

/// Parses a CSV (or tab-separated) log with the columns
/// `Epoch, Training Loss, Validation Loss, Accuracy, Precision, Recall, F1`.
///
/// Header matching ignores case and treats `_`/`-` as spaces. Footnote
/// markers on the epoch (`6*`) are dropped.
pub fn parse_training_log(text: &str) -> Result<Vec<TrainingLogEntry>, EvaluationError> {
    let first = text.lines().next().unwrap_or_default();
    let delimiter = if first.contains('\t') { b'\t' } else { b',' };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| EvaluationError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let keys: Vec<String> = headers.iter().map(header_key).collect();
    let mut index = [0usize; 7];
    for (slot, column) in index.iter_mut().zip(COLUMNS) {
        *slot = keys.iter().position(|k| k == column).ok_or_else(|| EvaluationError::Parse {
            line: 1,
            message: format!("missing column '{column}'"),
        })?;
    }

    let mut entries = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| EvaluationError::Parse {
            line,
            message: e.to_string(),
        })?;
        let field = |i: usize| record.get(index[i]).unwrap_or_default();
        let number = |i: usize| -> Result<f64, EvaluationError> {
            field(i).parse::<f64>().map_err(|_| EvaluationError::Parse {
                line,
                message: format!("'{}' is not a number in column '{}'", field(i), COLUMNS[i]),
            })
        };
        let epoch = field(0).trim_end_matches('*').parse::<u32>().map_err(|_| EvaluationError::Parse {
            line,
            message: format!("'{}' is not an epoch number", field(0)),
        })?;
        entries.push(TrainingLogEntry {
            epoch,
            training_loss: number(1)?,
            validation_loss: number(2)?,
            accuracy: number(3)?,
            precision: number(4)?,
            recall: number(5)?,
            f1: number(6)?,
        });
    }
    Ok(entries)
}

fn check_order(log: &[TrainingLogEntry]) -> Result<(), EvaluationError> {
    let mut previous = 0;
    for (row, entry) in log.iter().enumerate() {
        let ok = if row == 0 { entry.epoch == 1 } else { entry.epoch > previous };
        if !ok {
            return Err(EvaluationError::EpochOrder {
                row: row + 1,
                found: entry.epoch,
            });
        }
        previous = entry.epoch;
    }
    Ok(())
}

/// Picks the epoch to keep. Ties go to the earliest epoch.
pub fn select_epoch(log: &[TrainingLogEntry], policy: EpochPolicy) -> Result<u32, EvaluationError> {
    if log.is_empty() {
        return Err(EvaluationError::EmptyLog);
    }
    check_order(log)?;
    let chosen = match policy {
        EpochPolicy::MinValLoss => log
            .iter()
            .fold(&log[0], |best, e| if e.validation_loss < best.validation_loss { e } else { best }),
        EpochPolicy::MaxF1 => log.iter().fold(&log[0], |best, e| if e.f1 > best.f1 { e } else { best }),
        EpochPolicy::Trajectory => log
            .windows(2)
            .find(|w| w[1].validation_loss > w[0].validation_loss && w[1].f1 < w[0].f1)
            .map_or(&log[log.len() - 1], |w| &w[0]),
    };
    Ok(chosen.epoch)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LOG: &str = "\
Epoch,Training Loss,Validation Loss,Accuracy,Precision,Recall,F1
1,0.7539,0.9286,0.9247,0.4624,0.5000,0.4804
2,0.7688,0.6723,0.9247,0.4624,0.5000,0.4804
3,0.5976,0.9373,0.9281,0.8220,0.5361,0.5488
4,0.4941,0.9430,0.9292,0.7643,0.5915,0.6274
5,0.3664,0.9327,0.9202,0.7010,0.6415,0.6645
6*,0.3199,1.0339,0.9213,0.6987,0.6079,0.6360
";

    #[test]
    fn sudan_log_policies() {
        let log = parse_training_log(LOG).unwrap();
        assert_eq!(log.len(), 6);
        assert_eq!(log[5].epoch, 6);
        assert_eq!(select_epoch(&log, EpochPolicy::Trajectory), Ok(5));
        assert_eq!(select_epoch(&log, EpochPolicy::MinValLoss), Ok(2));
        assert_eq!(select_epoch(&log, EpochPolicy::MaxF1), Ok(5));
    }

    #[test]
    fn trajectory_without_trigger_returns_last() {
        let log = parse_training_log(LOG).unwrap();
        assert_eq!(select_epoch(&log[..5], EpochPolicy::Trajectory), Ok(5));
        assert_eq!(select_epoch(&log[..1], EpochPolicy::Trajectory), Ok(1));
    }

    #[test]
    fn tab_separated_and_snake_case_headers() {
        let tsv = "epoch\ttraining_loss\tvalidation_loss\taccuracy\tprecision\trecall\tf1\n1\t1\t0.5\t0.9\t0.5\t0.5\t0.5\n";
        let log = parse_training_log(tsv).unwrap();
        assert_eq!(log[0].validation_loss, 0.5);
    }

    #[test]
    fn errors() {
        assert_eq!(select_epoch(&[], EpochPolicy::MaxF1), Err(EvaluationError::EmptyLog));
        let mut log = parse_training_log(LOG).unwrap();
        log.swap(1, 2);
        assert!(matches!(select_epoch(&log, EpochPolicy::MaxF1), Err(EvaluationError::EpochOrder { row: 3, .. })));
        assert!(matches!(
            parse_training_log("Epoch,F1\n1,0.5\n"),
            Err(EvaluationError::Parse { line: 1, .. })
        ));
        let bad = LOG.replace("0.9373", "n/a");
        assert!(matches!(parse_training_log(&bad), Err(EvaluationError::Parse { line: 4, .. })));
    }
}
