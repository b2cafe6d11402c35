//! Keyword-list baseline classifier.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use super::EvaluationError;
use crate::domain::BinaryLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    None,
    #[default]
    Casefold,
    CasefoldStripDiacritics,
}

/// Letter-variant folding for Arabic script: hamza-carrying alefs to bare
/// alef, alef maqsura to ya, ta marbuta to ha, and tatweel removed.
pub fn arabic_letter_folding() -> BTreeMap<char, String> {
    let mut table = BTreeMap::new();
    for alef in ['\u{0623}', '\u{0625}', '\u{0622}', '\u{0671}'] {
        table.insert(alef, "\u{0627}".to_owned());
    }
    table.insert('\u{0649}', "\u{064A}".to_owned());
    table.insert('\u{0629}', "\u{0647}".to_owned());
    table.insert('\u{0640}', String::new());
    table
}

/// Positive iff any normalized keyword is a substring of the normalized text.
#[derive(Debug, Clone)]
pub struct KeywordClassifier {
    normalization: Normalization,
    folding: BTreeMap<char, String>,
    keywords: Vec<String>,
}

impl KeywordClassifier {
    pub fn new<S: AsRef<str>>(keywords: &[S], normalization: Normalization) -> Result<Self, EvaluationError> {
        Self::with_folding(keywords, normalization, BTreeMap::new())
    }

    /// Like [`KeywordClassifier::new`], applying an extra character folding
    /// table after normalization.
    pub fn with_folding<S: AsRef<str>>(
        keywords: &[S],
        normalization: Normalization,
        folding: BTreeMap<char, String>,
    ) -> Result<Self, EvaluationError> {
        let mut classifier = Self {
            normalization,
            folding,
            keywords: Vec::new(),
        };
        classifier.keywords = keywords
            .iter()
            .map(|k| classifier.normalize(k.as_ref()))
            .filter(|k| !k.is_empty())
            .collect();
        if classifier.keywords.is_empty() {
            return Err(EvaluationError::EmptyKeywords);
        }
        Ok(classifier)
    }

    pub fn normalize(&self, text: &str) -> String {
        let normalized = match self.normalization {
            Normalization::None => text.to_owned(),
            Normalization::Casefold => text.to_lowercase(),
            Normalization::CasefoldStripDiacritics => text
                .nfd()
                .filter(|c| !is_combining_mark(*c))
                .nfc()
                .collect::<String>()
                .to_lowercase(),
        };
        if self.folding.is_empty() {
            return normalized;
        }
        normalized
            .chars()
            .fold(String::with_capacity(normalized.len()), |mut out, c| {
                match self.folding.get(&c) {
                    Some(replacement) => out.push_str(replacement),
                    None => out.push(c),
                }
                out
            })
    }

    pub fn classify(&self, text: &str) -> BinaryLabel {
        let text = self.normalize(text);
        if self.keywords.iter().any(|k| text.contains(k.as_str())) {
            BinaryLabel::Positive
        } else {
            BinaryLabel::Negative
        }
    }
}

pub fn keyword_classify<S: AsRef<str>>(
    text: &str,
    keywords: &[S],
    normalization: Normalization,
) -> Result<BinaryLabel, EvaluationError> {
    Ok(KeywordClassifier::new(keywords, normalization)?.classify(text))
}
