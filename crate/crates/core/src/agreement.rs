//! Inter-rater reliability: Krippendorff's alpha, Gwet's AC1 and per-item
//! disagreement scores.
//!
//! Alpha uses the coincidence-matrix formulation. Each item with `m >= 2`
//! pairable values contributes every ordered pair of its values with weight
//! `1 / (m - 1)`; items with a single value are not pairable and drop out.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Annotation, Author, ItemId, LabellingSchema, RoundId, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgreementError {
    #[error("insufficient data: no item has two or more ratings")]
    InsufficientData,
    #[error("degenerate distribution: expected disagreement is zero")]
    DegenerateDistribution,
    #[error("value {value} outside [0, {category_count})")]
    ValueOutOfRange { value: u32, category_count: u32 },
    #[error("row has {got} cells, table has {expected} annotators")]
    RowWidth { expected: usize, got: usize },
    #[error("at least two categories are required, got {0}")]
    TooFewCategories(u32),
}

/// Items x annotators matrix of category values, with missing cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReliabilityTable {
    category_count: u32,
    annotators: usize,
    rows: Vec<Vec<Option<u32>>>,
}

impl ReliabilityTable {
    pub fn new(category_count: u32, annotators: usize) -> Self {
        Self {
            category_count,
            annotators,
            rows: Vec::new(),
        }
    }

    /// Builds a table from complete rows (no missing cells).
    pub fn from_complete(category_count: u32, rows: &[Vec<u32>]) -> Result<Self, AgreementError> {
        let width = rows.first().map_or(0, Vec::len);
        let mut table = Self::new(category_count, width);
        for row in rows {
            table.push_row(row.iter().copied().map(Some).collect())?;
        }
        Ok(table)
    }

    pub fn push_row(&mut self, row: Vec<Option<u32>>) -> Result<(), AgreementError> {
        if row.len() != self.annotators {
            return Err(AgreementError::RowWidth {
                expected: self.annotators,
                got: row.len(),
            });
        }
        if let Some(value) = row.iter().flatten().find(|v| **v >= self.category_count) {
            return Err(AgreementError::ValueOutOfRange {
                value: *value,
                category_count: self.category_count,
            });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn category_count(&self) -> u32 {
        self.category_count
    }

    pub fn annotator_count(&self) -> usize {
        self.annotators
    }

    pub fn rows(&self) -> &[Vec<Option<u32>>] {
        &self.rows
    }

    fn item_values(&self) -> impl Iterator<Item = Vec<u32>> + '_ {
        self.rows.iter().map(|row| row.iter().flatten().copied().collect())
    }
}

/// Distance function between categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceMetric {
    Nominal,
    Ordinal,
    Interval,
}

/// Krippendorff's alpha, `1 - D_obs / D_exp`.
pub fn krippendorff_alpha(table: &ReliabilityTable, metric: DistanceMetric) -> Result<f64, AgreementError> {
    let q = table.category_count as usize;
    let mut coincidences = vec![vec![0.0f64; q]; q];
    let mut pairable = false;
    for values in table.item_values() {
        let m = values.len();
        if m < 2 {
            continue;
        }
        pairable = true;
        let mut counts = vec![0.0f64; q];
        for v in &values {
            counts[*v as usize] += 1.0;
        }
        let weight = 1.0 / (m as f64 - 1.0);
        for c in 0..q {
            if counts[c] == 0.0 {
                continue;
            }
            for k in 0..q {
                let pairs = if c == k {
                    counts[c] * (counts[c] - 1.0)
                } else {
                    counts[c] * counts[k]
                };
                coincidences[c][k] += pairs * weight;
            }
        }
    }
    if !pairable {
        return Err(AgreementError::InsufficientData);
    }

    let marginals: Vec<f64> = coincidences.iter().map(|row| row.iter().sum()).collect();
    let n: f64 = marginals.iter().sum();
    let delta = distance_table(metric, &marginals);

    let mut observed = 0.0;
    let mut expected = 0.0;
    for c in 0..q {
        for k in 0..q {
            observed += coincidences[c][k] * delta[c][k];
            expected += marginals[c] * marginals[k] * delta[c][k];
        }
    }
    observed /= n;
    expected /= n * (n - 1.0);
    if expected <= 0.0 {
        return Err(AgreementError::DegenerateDistribution);
    }
    Ok(1.0 - observed / expected)
}

/// Squared distances between every pair of categories.
fn distance_table(metric: DistanceMetric, marginals: &[f64]) -> Vec<Vec<f64>> {
    let q = marginals.len();
    let mut delta = vec![vec![0.0; q]; q];
    for c in 0..q {
        for k in 0..q {
            delta[c][k] = match metric {
                DistanceMetric::Nominal => (c != k) as u8 as f64,
                DistanceMetric::Interval => ((c as f64) - (k as f64)).powi(2),
                DistanceMetric::Ordinal => {
                    let (lo, hi) = (c.min(k), c.max(k));
                    let span: f64 = marginals[lo..=hi].iter().sum();
                    (span - (marginals[c] + marginals[k]) / 2.0).powi(2)
                }
            };
        }
    }
    delta
}

/// Gwet's AC1 for nominal categories.
///
/// Percent agreement is averaged over items with at least two ratings.
/// Category prevalence `pi_q` is averaged over every item with at least one
/// rating.
pub fn gwet_ac1(table: &ReliabilityTable) -> Result<f64, AgreementError> {
    let q = table.category_count as usize;
    if q < 2 {
        return Err(AgreementError::TooFewCategories(table.category_count));
    }
    let mut agreement_sum = 0.0;
    let mut pairable_items = 0usize;
    let mut prevalence = vec![0.0f64; q];
    let mut rated_items = 0usize;
    for values in table.item_values() {
        let r = values.len();
        if r == 0 {
            continue;
        }
        let mut counts = vec![0.0f64; q];
        for v in &values {
            counts[*v as usize] += 1.0;
        }
        rated_items += 1;
        for (p, c) in prevalence.iter_mut().zip(&counts) {
            *p += c / r as f64;
        }
        if r >= 2 {
            let rf = r as f64;
            pairable_items += 1;
            agreement_sum += counts.iter().map(|c| c * (c - 1.0)).sum::<f64>() / (rf * (rf - 1.0));
        }
    }
    if pairable_items == 0 {
        return Err(AgreementError::InsufficientData);
    }
    let observed = agreement_sum / pairable_items as f64;
    let chance = prevalence
        .iter()
        .map(|p| p / rated_items as f64)
        .map(|pi| pi * (1.0 - pi))
        .sum::<f64>()
        / (q as f64 - 1.0);
    if (1.0 - chance).abs() < f64::EPSILON {
        return Err(AgreementError::DegenerateDistribution);
    }
    Ok((observed - chance) / (1.0 - chance))
}

/// Mean normalized pairwise distance over the scored fields of one item.
///
/// Scored fields are the classification plus every schema flag. The class
/// distance is `|a - b| / (C - 1)`; each flag contributes 0 or 1.
/// `mark_for_review` is not scored.
pub fn item_disagreement(annotations: &[&Annotation], schema: &LabellingSchema) -> Result<f64, AgreementError> {
    if annotations.len() < 2 {
        return Err(AgreementError::InsufficientData);
    }
    let span = (schema.class_count().max(2) - 1) as f64;
    let fields = 1 + schema.flags.len();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (i, a) in annotations.iter().enumerate() {
        for b in &annotations[i + 1..] {
            let mut distance = (a.class_value() as f64 - b.class_value() as f64).abs() / span;
            for flag in &schema.flags {
                if a.has_flag(flag) != b.has_flag(flag) {
                    distance += 1.0;
                }
            }
            total += distance / fields as f64;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Per-item disagreement row, as exported in the per-item CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub item_id: ItemId,
    pub score: f64,
    pub n_annotations: usize,
    pub marked_for_review: bool,
}

/// Corpus-level reliability for one round (or cumulatively when `round_id`
/// is `None`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub round_id: Option<RoundId>,
    pub computed_at: Timestamp,
    pub n_items: usize,
    pub alpha_classification: Option<f64>,
    pub ac1_per_flag: BTreeMap<String, Option<f64>>,
    pub item_scores: Vec<ItemScore>,
    /// Items with fewer live annotations than the schema minimum.
    pub under_annotated: Vec<ItemId>,
    pub warnings: Vec<String>,
}

impl AgreementReport {
    pub fn score(&self, item: &ItemId) -> Option<f64> {
        self.item_scores.iter().find(|s| &s.item_id == item).map(|s| s.score)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-item scores as CSV: `item_id,score,n_annotations,marked_for_review`.
    pub fn item_scores_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(["item_id", "score", "n_annotations", "marked_for_review"])
            .expect("in-memory write");
        for s in &self.item_scores {
            writer
                .write_record([
                    s.item_id.as_str(),
                    &format!("{:.6}", s.score),
                    &s.n_annotations.to_string(),
                    if s.marked_for_review { "true" } else { "false" },
                ])
                .expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("flush")).expect("utf-8 csv")
    }
}

/// Options for [`agreement_report`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ReportOptions {
    /// Include superseded annotations, giving the pre-harmonisation picture.
    pub include_superseded: bool,
}

/// Builds a report over the given annotations.
///
/// When several annotations share an (item, author) cell, the most recent
/// one wins, which only happens when the input spans several rounds.
/// Coefficient failures become warnings; the report is always produced.
pub fn agreement_report(
    annotations: &[Annotation],
    schema: &LabellingSchema,
    round_id: Option<RoundId>,
    computed_at: Timestamp,
    options: ReportOptions,
) -> AgreementReport {
    let mut cells: BTreeMap<&ItemId, BTreeMap<&Author, &Annotation>> = BTreeMap::new();
    for a in annotations {
        if !options.include_superseded && !a.is_live() {
            continue;
        }
        if round_id.is_some_and(|r| r != a.round_id) {
            continue;
        }
        let slot = cells.entry(&a.item_id).or_default().entry(&a.author).or_insert(a);
        if (a.round_id, a.id) > (slot.round_id, slot.id) {
            *slot = a;
        }
    }

    let mut warnings = Vec::new();
    let mut item_scores = Vec::new();
    let mut under_annotated = Vec::new();
    for (item, by_author) in &cells {
        let list: Vec<&Annotation> = by_author.values().copied().collect();
        if list.len() < schema.min_annotators_per_item {
            under_annotated.push((*item).clone());
        }
        if let Ok(score) = item_disagreement(&list, schema) {
            item_scores.push(ItemScore {
                item_id: (*item).clone(),
                score,
                n_annotations: list.len(),
                marked_for_review: list.iter().any(|a| a.content.mark_for_review),
            });
        }
    }

    let authors: BTreeSet<&Author> = cells.values().flat_map(|m| m.keys().copied()).collect();
    let column: BTreeMap<&Author, usize> = authors.iter().enumerate().map(|(i, a)| (*a, i)).collect();
    let build = |value: &dyn Fn(&Annotation) -> u32, categories: u32| {
        let mut table = ReliabilityTable::new(categories, column.len());
        for by_author in cells.values() {
            let mut row = vec![None; column.len()];
            for (author, a) in by_author {
                row[column[author]] = Some(value(a));
            }
            table.push_row(row).expect("values validated against schema");
        }
        table
    };

    let mut alpha_classification = None;
    if cells.is_empty() {
        warnings.push("no annotations: coefficients not computed".to_owned());
    } else {
        let in_scale = cells
            .values()
            .flat_map(|m| m.values())
            .all(|a| schema.contains_class(a.class_value()));
        if in_scale {
            let table = build(&|a| a.class_value(), schema.class_count());
            match krippendorff_alpha(&table, DistanceMetric::Ordinal) {
                Ok(alpha) => alpha_classification = Some(alpha),
                Err(e) => warnings.push(format!("alpha (classification): {e}")),
            }
        } else {
            warnings.push("alpha (classification): annotations outside the schema scale".to_owned());
        }
    }

    let mut ac1_per_flag = BTreeMap::new();
    if !cells.is_empty() {
        for flag in &schema.flags {
            let table = build(&|a| a.has_flag(flag) as u32, 2);
            let value = match gwet_ac1(&table) {
                Ok(v) => Some(v),
                Err(e) => {
                    warnings.push(format!("AC1 ({flag}): {e}"));
                    None
                }
            };
            ac1_per_flag.insert(flag.clone(), value);
        }
    }

    AgreementReport {
        round_id,
        computed_at,
        n_items: cells.len(),
        alpha_classification,
        ac1_per_flag,
        item_scores,
        under_annotated,
        warnings,
    }
}
