//! Side-by-side model comparison in the usual benchmark-table layout.

use serde::{Deserialize, Serialize};

use super::{classification_metrics, confusion_matrix, EvaluationError, GoldSet, PredictionSet};

/// Whether a row was computed here or copied from a publication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowSource {
    Computed,
    Reported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model_name: String,
    pub accuracy: f64,
    pub precision_positive: f64,
    pub recall_positive: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub source: RowSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Display name of the positive class, e.g. "Hate".
    pub positive_label: String,
    pub rows: Vec<ReportRow>,
    pub warnings: Vec<String>,
}

/// Evaluates each prediction set against the gold labels.
///
/// Sets that fail coverage are left out and noted in `warnings`.
pub fn compare_models(gold: &GoldSet, prediction_sets: &[PredictionSet], positive_label: &str) -> EvaluationReport {
    let mut report = EvaluationReport {
        positive_label: positive_label.to_owned(),
        rows: Vec::new(),
        warnings: Vec::new(),
    };
    for set in prediction_sets {
        let metrics = match confusion_matrix(gold, set).and_then(|m| classification_metrics(&m)) {
            Ok(m) => m,
            Err(e) => {
                report.warnings.push(format!("{}: excluded: {e}", set.model_name));
                continue;
            }
        };
        for w in &metrics.warnings {
            report.warnings.push(format!("{}: {w}", set.model_name));
        }
        report.rows.push(ReportRow {
            model_name: set.model_name.clone(),
            accuracy: metrics.accuracy,
            precision_positive: metrics.precision_pos,
            recall_positive: metrics.recall_pos,
            precision_macro: metrics.precision_macro,
            recall_macro: metrics.recall_macro,
            f1_macro: metrics.f1_macro,
            source: RowSource::Computed,
        });
    }
    report.sort();
    report
}

/// Parses reference rows from CSV with columns
/// `model,accuracy,precision_positive,recall_positive,precision_macro,recall_macro,f1_macro`.
pub fn parse_reported_csv(text: &str) -> Result<Vec<ReportRow>, EvaluationError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| EvaluationError::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.len() < 7 {
            return Err(EvaluationError::Parse {
                line,
                message: format!("expected 7 columns, found {}", record.len()),
            });
        }
        let mut values = [0.0; 6];
        for (slot, raw) in values.iter_mut().zip(record.iter().skip(1)) {
            *slot = raw.parse().map_err(|_| EvaluationError::Parse {
                line,
                message: format!("'{raw}' is not a number"),
            })?;
        }
        rows.push(ReportRow {
            model_name: record[0].to_owned(),
            accuracy: values[0],
            precision_positive: values[1],
            recall_positive: values[2],
            precision_macro: values[3],
            recall_macro: values[4],
            f1_macro: values[5],
            source: RowSource::Reported,
        });
    }
    Ok(rows)
}

impl EvaluationReport {
    /// Adds published reference rows; they are shown but never recomputed.
    pub fn attach_reported(&mut self, rows: impl IntoIterator<Item = ReportRow>) {
        self.rows.extend(rows.into_iter().map(|mut r| {
            r.source = RowSource::Reported;
            r
        }));
        self.sort();
    }

    fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            b.f1_macro
                .total_cmp(&a.f1_macro)
                .then_with(|| a.model_name.cmp(&b.model_name))
        });
    }

    pub fn headers(&self) -> [String; 7] {
        [
            "Model".to_owned(),
            "Accuracy".to_owned(),
            format!("Precision ({})", self.positive_label),
            format!("Recall ({})", self.positive_label),
            "Precision (Macro)".to_owned(),
            "Recall (Macro)".to_owned(),
            "F1 (Macro)".to_owned(),
        ]
    }

    fn cells(row: &ReportRow) -> [String; 7] {
        let name = match row.source {
            RowSource::Computed => row.model_name.clone(),
            RowSource::Reported => format!("{} [reported]", row.model_name),
        };
        [
            name,
            format!("{:.3}", row.accuracy),
            format!("{:.3}", row.precision_positive),
            format!("{:.3}", row.recall_positive),
            format!("{:.3}", row.precision_macro),
            format!("{:.3}", row.recall_macro),
            format!("{:.3}", row.f1_macro),
        ]
    }

    /// Aligned plain-text table, best model first.
    pub fn to_table(&self) -> String {
        let headers = self.headers();
        let body: Vec<[String; 7]> = self.rows.iter().map(Self::cells).collect();
        let mut widths = headers.clone().map(|h| h.chars().count());
        for row in &body {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let render = |cells: &[String; 7]| {
            let mut line = String::new();
            for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
                if i == 0 {
                    line.push_str(&format!("{cell:<w$}"));
                } else {
                    line.push_str(&format!("  {cell:>w$}"));
                }
            }
            line.push('\n');
            line
        };
        let mut out = render(&headers);
        let rule: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
        out.push_str(&"-".repeat(rule));
        out.push('\n');
        for row in &body {
            out.push_str(&render(row));
        }
        out
    }

    /// CSV with full-precision values and a `source` column.
    pub fn to_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record([
                "model",
                "accuracy",
                "precision_positive",
                "recall_positive",
                "precision_macro",
                "recall_macro",
                "f1_macro",
                "source",
            ])
            .expect("in-memory write");
        for r in &self.rows {
            writer
                .write_record([
                    r.model_name.clone(),
                    r.accuracy.to_string(),
                    r.precision_positive.to_string(),
                    r.recall_positive.to_string(),
                    r.precision_macro.to_string(),
                    r.recall_macro.to_string(),
                    r.f1_macro.to_string(),
                    match r.source {
                        RowSource::Computed => "computed",
                        RowSource::Reported => "reported",
                    }
                    .to_owned(),
                ])
                .expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("flush")).expect("utf-8 csv")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{BinaryLabel, ItemId};
    use crate::evaluation::ConfusionMatrix;

    /// Gold with 20 positives and 80 negatives, plus predictions realising
    /// the given confusion counts.
    fn engineered(m: ConfusionMatrix) -> (GoldSet, PredictionSet) {
        let mut gold = GoldSet::new();
        let mut preds = std::collections::BTreeMap::new();
        let mut push = |count: u64, g: BinaryLabel, p: BinaryLabel| {
            for _ in 0..count {
                let id = ItemId::new(format!("i{:04}", gold.len()));
                gold.insert(id.clone(), g);
                preds.insert(id, p);
            }
        };
        push(m.tp, BinaryLabel::Positive, BinaryLabel::Positive);
        push(m.fp, BinaryLabel::Negative, BinaryLabel::Positive);
        push(m.fn_, BinaryLabel::Positive, BinaryLabel::Negative);
        push(m.tn, BinaryLabel::Negative, BinaryLabel::Negative);
        (gold, PredictionSet::new("engineered", preds))
    }

    #[test]
    fn gold_against_itself_ranks_first() {
        let (gold, model) = engineered(ConfusionMatrix::new(10, 5, 10, 75));
        let oracle = PredictionSet::new("oracle", gold.clone());
        let report = compare_models(&gold, &[model, oracle], "Hate");
        assert_eq!(report.rows[0].model_name, "oracle");
        assert_eq!(report.rows[0].accuracy, 1.0);
        let row = &report.rows[1];
        assert!((row.accuracy - 0.85).abs() < 1e-12);
        assert!((row.f1_macro - (4.0 / 7.0 + 10.0 / 11.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn uncovered_models_are_excluded() {
        let (gold, _) = engineered(ConfusionMatrix::new(1, 1, 1, 1));
        let partial = PredictionSet::new("partial", gold.iter().take(2).map(|(k, v)| (k.clone(), *v)).collect());
        let report = compare_models(&gold, &[partial], "Hate");
        assert!(report.rows.is_empty());
        assert!(report.warnings[0].starts_with("partial: excluded"));
    }

    #[test]
    fn reported_rows_render_and_sort() {
        let (gold, model) = engineered(ConfusionMatrix::new(10, 5, 10, 75));
        let mut report = compare_models(&gold, &[model], "Hate");
        let reported = parse_reported_csv(
            "model,accuracy,precision_positive,recall_positive,precision_macro,recall_macro,f1_macro\n\
             Hate-Speech-Sudan-v2,0.920,0.425,0.388,0.688,0.660,0.673\n\
             dehatebert-mono-arabic,0.884,0.225,0.241,0.584,0.595,0.589\n",
        )
        .unwrap();
        report.attach_reported(reported);
        let order: Vec<&str> = report.rows.iter().map(|r| r.model_name.as_str()).collect();
        assert_eq!(order, ["engineered", "Hate-Speech-Sudan-v2", "dehatebert-mono-arabic"]);
        let table = report.to_table();
        for h in report.headers() {
            assert!(table.lines().next().unwrap().contains(&h), "{h}");
        }
        assert!(table.contains("Hate-Speech-Sudan-v2 [reported]"));
        assert_eq!(report.to_csv().lines().count(), 4);
    }

    #[test]
    fn reported_csv_errors() {
        assert!(parse_reported_csv("model,a\nx,1\n").is_err());
        assert!(parse_reported_csv("h1,h2,h3,h4,h5,h6,h7\nx,1,2,3,4,5,nope\n").is_err());
    }
}
