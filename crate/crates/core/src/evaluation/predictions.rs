use std::collections::BTreeMap;

use serde::Deserialize;

use super::EvaluationError;
use crate::domain::{BinaryLabel, ItemId};

/// Gold binary labels keyed by item.
pub type GoldSet = BTreeMap<ItemId, BinaryLabel>;

/// One model's binary predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionSet {
    pub model_name: String,
    pub predictions: BTreeMap<ItemId, BinaryLabel>,
}

#[derive(Deserialize)]
struct PredictionLine {
    id: ItemId,
    #[serde(default)]
    label: Option<u8>,
    #[serde(default)]
    score: Option<f64>,
}

impl PredictionSet {
    pub fn new(model_name: impl Into<String>, predictions: BTreeMap<ItemId, BinaryLabel>) -> Self {
        Self {
            model_name: model_name.into(),
            predictions,
        }
    }

    /// Parses a prediction file: one `{"id", "label": 0|1}` or
    /// `{"id", "score": x}` object per line. Scores at or above `threshold`
    /// are positive.
    pub fn from_jsonl(model_name: impl Into<String>, text: &str, threshold: f64) -> Result<Self, EvaluationError> {
        let mut predictions = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let parsed: PredictionLine = serde_json::from_str(raw).map_err(|e| EvaluationError::Parse {
                line,
                message: e.to_string(),
            })?;
            let label = match (parsed.label, parsed.score) {
                (Some(v), None) => BinaryLabel::from_u8(v).ok_or_else(|| EvaluationError::Parse {
                    line,
                    message: format!("label must be 0 or 1, got {v}"),
                })?,
                (None, Some(score)) => {
                    if !(0.0..=1.0).contains(&score) {
                        return Err(EvaluationError::ScoreOutOfRange { id: parsed.id, score });
                    }
                    if score >= threshold {
                        BinaryLabel::Positive
                    } else {
                        BinaryLabel::Negative
                    }
                }
                _ => {
                    return Err(EvaluationError::Parse {
                        line,
                        message: "expected exactly one of \"label\" or \"score\"".to_owned(),
                    })
                }
            };
            if predictions.insert(parsed.id.clone(), label).is_some() {
                return Err(EvaluationError::DuplicateId(parsed.id));
            }
        }
        Ok(Self::new(model_name, predictions))
    }
}

#[derive(Deserialize)]
struct GoldLine {
    id: ItemId,
    #[serde(default)]
    binary: Option<u8>,
    #[serde(default)]
    label: Option<u8>,
    #[serde(default)]
    class: Option<u32>,
}

/// Parses gold labels. Accepts dataset export records (`binary`), prediction
/// style records (`label`), or bare classes (`class`, collapsed not-vs-rest).
pub fn parse_gold_jsonl(text: &str) -> Result<GoldSet, EvaluationError> {
    let mut gold = GoldSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parsed: GoldLine = serde_json::from_str(raw).map_err(|e| EvaluationError::Parse {
            line,
            message: e.to_string(),
        })?;
        let label = match (parsed.binary.or(parsed.label), parsed.class) {
            (Some(v), _) => BinaryLabel::from_u8(v),
            (None, Some(c)) => Some(if c == 0 { BinaryLabel::Negative } else { BinaryLabel::Positive }),
            (None, None) => None,
        }
        .ok_or_else(|| EvaluationError::Parse {
            line,
            message: "missing or invalid binary/label/class field".to_owned(),
        })?;
        if gold.insert(parsed.id.clone(), label).is_some() {
            return Err(EvaluationError::DuplicateId(parsed.id));
        }
    }
    Ok(gold)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_and_scores() {
        let text = "{\"id\":\"a\",\"label\":1}\n{\"id\":\"b\",\"score\":0.7}\n\n{\"id\":\"c\",\"score\":0.2}\n";
        let set = PredictionSet::from_jsonl("m", text, 0.5).unwrap();
        assert_eq!(set.predictions[&ItemId::from("a")], BinaryLabel::Positive);
        assert_eq!(set.predictions[&ItemId::from("b")], BinaryLabel::Positive);
        assert_eq!(set.predictions[&ItemId::from("c")], BinaryLabel::Negative);

        let strict = PredictionSet::from_jsonl("m", text, 0.8).unwrap();
        assert_eq!(strict.predictions[&ItemId::from("b")], BinaryLabel::Negative);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(matches!(
            PredictionSet::from_jsonl("m", "{\"id\":\"a\",\"score\":1.2}", 0.5),
            Err(EvaluationError::ScoreOutOfRange { .. })
        ));
        assert!(matches!(
            PredictionSet::from_jsonl("m", "{\"id\":\"a\",\"label\":2}", 0.5),
            Err(EvaluationError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            PredictionSet::from_jsonl("m", "{\"id\":\"a\"}", 0.5),
            Err(EvaluationError::Parse { .. })
        ));
        assert!(matches!(
            PredictionSet::from_jsonl("m", "{\"id\":\"a\",\"label\":1}\n{\"id\":\"a\",\"label\":0}", 0.5),
            Err(EvaluationError::DuplicateId(_))
        ));
    }

    #[test]
    fn gold_formats() {
        let text = "{\"id\":\"a\",\"text\":\"t\",\"class\":2,\"binary\":1,\"split\":\"test\"}\n{\"id\":\"b\",\"label\":0}\n{\"id\":\"c\",\"class\":1}\n";
        let gold = parse_gold_jsonl(text).unwrap();
        assert_eq!(gold.len(), 3);
        assert_eq!(gold[&ItemId::from("c")], BinaryLabel::Positive);
        assert!(parse_gold_jsonl("{\"id\":\"x\"}").is_err());
    }
}
