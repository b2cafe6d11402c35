//! Pool sampling, round planning, redundant assignment and holdout carving.
//!
//! Every randomized operation takes an explicit seed and draws from a
//! ChaCha8 stream, so identical inputs give identical outputs on every
//! platform.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agreement::{agreement_report, AgreementReport, ReportOptions};
use crate::aggregation::{aggregate_item, needs_review};
use crate::domain::{AggregateLabel, Annotation, AnnotatorId, ItemId, LabellingSchema, RoundId, Timestamp};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrchestrationError {
    #[error("cannot sample {requested} items from a corpus of {available}")]
    InfeasibleSample { requested: usize, available: usize },
    #[error("cannot plan {rounds} rounds over {total} items")]
    InfeasiblePlan { total: usize, rounds: usize },
    #[error("growth factor {0} must be a finite number >= 1")]
    InvalidGrowth(f64),
    #[error("need at least {needed} annotators per item, only {available} available")]
    TooFewAnnotators { needed: usize, available: usize },
    #[error("fraction {0} outside [0, 1]")]
    FractionOutOfRange(f64),
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform sample without replacement, in draw order.
pub fn sample_pool<T: Clone>(corpus: &[T], n: usize, seed: u64) -> Result<Vec<T>, OrchestrationError> {
    if n > corpus.len() {
        return Err(OrchestrationError::InfeasibleSample {
            requested: n,
            available: corpus.len(),
        });
    }
    let picks = index::sample(&mut rng(seed), corpus.len(), n);
    Ok(picks.into_iter().map(|i| corpus[i].clone()).collect())
}

/// Batch sizes for successive rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundPlan {
    pub round_sizes: Vec<usize>,
    pub growth_factor: f64,
    pub total: usize,
}

impl RoundPlan {
    pub fn size_of(&self, round: RoundId) -> Option<usize> {
        round
            .checked_sub(1)
            .and_then(|i| self.round_sizes.get(i as usize))
            .copied()
    }
}

/// Geometric round sizes.
///
/// Round `i` gets `round(total * g^i / sum_j g^j)` and the last round takes
/// whatever remains, so the sizes sum to `total`. Every round gets at least
/// one item. If rounding leaves the last round smaller than its predecessor,
/// items move into it from the largest earlier rounds until the sequence is
/// non-decreasing.
pub fn plan_rounds(total: usize, n_rounds: usize, growth_factor: f64) -> Result<RoundPlan, OrchestrationError> {
    if !growth_factor.is_finite() || growth_factor < 1.0 {
        return Err(OrchestrationError::InvalidGrowth(growth_factor));
    }
    if n_rounds == 0 || total < n_rounds {
        return Err(OrchestrationError::InfeasiblePlan {
            total,
            rounds: n_rounds,
        });
    }
    let weights: Vec<f64> = (0..n_rounds).map(|i| growth_factor.powi(i as i32)).collect();
    let base = total as f64 / weights.iter().sum::<f64>();
    let mut sizes: Vec<usize> = weights[..n_rounds - 1]
        .iter()
        .map(|w| ((base * w).round() as usize).max(1))
        .collect();
    let mut last = total as i64 - sizes.iter().sum::<usize>() as i64;
    // The earlier sizes are non-decreasing; taking one from the first round
    // holding the peak keeps them so. Terminates once every earlier round
    // holds 1, since then last = total - (n - 1) >= 1.
    while sizes.last().is_some_and(|prev| last < *prev as i64) {
        let peak = *sizes.last().expect("checked");
        let j = sizes.iter().position(|s| *s == peak).expect("peak present");
        sizes[j] -= 1;
        last += 1;
    }
    sizes.push(last as usize);
    Ok(RoundPlan {
        round_sizes: sizes,
        growth_factor,
        total,
    })
}

/// Which annotators see which items in a round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub round_id: RoundId,
    pub items: BTreeMap<ItemId, BTreeSet<AnnotatorId>>,
}

impl Assignment {
    pub fn load(&self) -> BTreeMap<&AnnotatorId, usize> {
        let mut load = BTreeMap::new();
        for annotators in self.items.values() {
            for a in annotators {
                *load.entry(a).or_insert(0) += 1;
            }
        }
        load
    }
}

/// Assigns every item to exactly `k` distinct annotators.
///
/// Annotators are shuffled once, then slots are dealt round-robin around the
/// shuffled ring: item `i` gets ring positions `i*k .. i*k + k`. Loads differ
/// by at most one.
pub fn assign_batch(
    round_id: RoundId,
    items: &[ItemId],
    annotators: &[AnnotatorId],
    k: usize,
    seed: u64,
) -> Result<Assignment, OrchestrationError> {
    let ring: BTreeSet<&AnnotatorId> = annotators.iter().collect();
    if k == 0 || ring.len() < k {
        return Err(OrchestrationError::TooFewAnnotators {
            needed: k.max(1),
            available: ring.len(),
        });
    }
    let mut ring: Vec<&AnnotatorId> = ring.into_iter().collect();
    ring.shuffle(&mut rng(seed));
    let mut assignment = Assignment {
        round_id,
        items: BTreeMap::new(),
    };
    for (i, item) in items.iter().enumerate() {
        let chosen = (0..k).map(|j| ring[(i * k + j) % ring.len()].clone()).collect();
        assignment.items.insert(item.clone(), chosen);
    }
    Ok(assignment)
}

/// Uniform subset of `round(fraction * N)` ids.
///
/// The ids are sorted before drawing, so the result depends only on the set
/// of ids and the seed.
pub fn carve_holdout(ids: &[ItemId], fraction: f64, seed: u64) -> Result<BTreeSet<ItemId>, OrchestrationError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(OrchestrationError::FractionOutOfRange(fraction));
    }
    let sorted: Vec<&ItemId> = ids.iter().collect::<BTreeSet<_>>().into_iter().collect();
    let n = (fraction * sorted.len() as f64).round() as usize;
    let picks = index::sample(&mut rng(seed), sorted.len(), n.min(sorted.len()));
    Ok(picks.into_iter().map(|i| sorted[i].clone()).collect())
}

/// Outcome of closing a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round_id: RoundId,
    pub agreement: AgreementReport,
    /// Items to broadcast to the annotators who have not yet seen them.
    pub review_queue: Vec<ItemId>,
    /// Items for deliberation and re-annotation: high disagreement or marked.
    pub reannotation_queue: Vec<ItemId>,
    /// Labels for the items that are not queued for re-annotation.
    pub labels: Vec<AggregateLabel>,
}

impl RoundSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

/// Computes a round summary from the annotations recorded in that round.
pub fn summarize_round(
    round_id: RoundId,
    annotations: &[Annotation],
    schema: &LabellingSchema,
    reannotation_threshold: f64,
    computed_at: Timestamp,
) -> RoundSummary {
    let agreement = agreement_report(annotations, schema, Some(round_id), computed_at, ReportOptions::default());

    let mut by_item: BTreeMap<&ItemId, Vec<&Annotation>> = BTreeMap::new();
    for a in annotations.iter().filter(|a| a.is_live() && a.round_id == round_id) {
        by_item.entry(&a.item_id).or_default().push(a);
    }

    let mut review_queue = Vec::new();
    let mut reannotation_queue = Vec::new();
    let mut labels = Vec::new();
    for (item, list) in &by_item {
        let contested = agreement.score(item).is_some_and(|s| s > reannotation_threshold)
            || list.iter().any(|a| a.content.mark_for_review);
        if needs_review(list, schema.review_policy, schema) {
            review_queue.push((*item).clone());
        }
        if contested {
            reannotation_queue.push((*item).clone());
        } else if let Ok(label) = aggregate_item(item, list, schema) {
            labels.push(label);
        }
    }
    RoundSummary {
        round_id,
        agreement,
        review_queue,
        reannotation_queue,
        labels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{AnnotationContent, AnnotationId, Author};

    fn ids(n: usize) -> Vec<ItemId> {
        (0..n).map(|i| ItemId::new(format!("item-{i:05}"))).collect()
    }

    fn annotators(n: usize) -> Vec<AnnotatorId> {
        (0..n).map(|i| AnnotatorId::new(format!("ann-{i}"))).collect()
    }

    #[test]
    fn sample_sizes_from_both_campaigns() {
        let corpus = ids(20_000);
        for n in [10_633, 8_746] {
            let pool = sample_pool(&corpus, n, 7).unwrap();
            assert_eq!(pool.len(), n);
            assert_eq!(pool.iter().collect::<BTreeSet<_>>().len(), n);
        }
    }

    #[test]
    fn sample_is_deterministic() {
        let corpus = ids(500);
        assert_eq!(sample_pool(&corpus, 100, 3).unwrap(), sample_pool(&corpus, 100, 3).unwrap());
        assert_ne!(sample_pool(&corpus, 100, 3).unwrap(), sample_pool(&corpus, 100, 4).unwrap());
    }

    #[test]
    fn oversized_sample_rejected() {
        assert_eq!(
            sample_pool(&ids(5), 6, 0),
            Err(OrchestrationError::InfeasibleSample {
                requested: 6,
                available: 5
            })
        );
    }

    #[test]
    fn round_plans() {
        assert_eq!(plan_rounds(10_633, 4, 2.0).unwrap().round_sizes, vec![709, 1418, 2835, 5671]);
        // 8746/15 = 583.07: round-per-term gives 583, 1166, 2332 and the
        // remainder 4665 goes to the last round.
        assert_eq!(plan_rounds(8_746, 4, 2.0).unwrap().round_sizes, vec![583, 1166, 2332, 4665]);
        assert_eq!(plan_rounds(1_000, 4, 2.0).unwrap().round_sizes, vec![67, 133, 267, 533]);
        assert_eq!(plan_rounds(4, 4, 1.0).unwrap().round_sizes, vec![1, 1, 1, 1]);
    }

    #[test]
    fn round_plan_repairs_rounding() {
        // base 1.75 rounds to 2, 2, 2 leaving 1 for the last round
        assert_eq!(plan_rounds(7, 4, 1.0).unwrap().round_sizes, vec![1, 2, 2, 2]);
        // tiny shares are lifted to one item each
        assert_eq!(plan_rounds(4, 4, 2.0).unwrap().round_sizes, vec![1, 1, 1, 1]);
        assert_eq!(plan_rounds(5, 4, 10.0).unwrap().round_sizes, vec![1, 1, 1, 2]);
        // 1.5 rounds up three times and overshoots the total
        assert_eq!(plan_rounds(6, 4, 1.0).unwrap().round_sizes, vec![1, 1, 2, 2]);
    }

    #[test]
    fn infeasible_plans() {
        assert!(matches!(plan_rounds(3, 4, 2.0), Err(OrchestrationError::InfeasiblePlan { .. })));
        assert!(matches!(plan_rounds(3, 0, 2.0), Err(OrchestrationError::InfeasiblePlan { .. })));
        assert!(matches!(plan_rounds(30, 4, 0.5), Err(OrchestrationError::InvalidGrowth(_))));
        assert!(matches!(plan_rounds(30, 4, f64::NAN), Err(OrchestrationError::InvalidGrowth(_))));
    }

    #[test]
    fn assignment_examples() {
        let a = assign_batch(1, &ids(1), &annotators(3), 3, 0).unwrap();
        assert_eq!(a.items.values().next().unwrap().len(), 3);

        assert_eq!(
            assign_batch(1, &ids(1), &annotators(2), 3, 0),
            Err(OrchestrationError::TooFewAnnotators { needed: 3, available: 2 })
        );

        let a = assign_batch(1, &ids(10), &annotators(5), 3, 11).unwrap();
        assert!(a.load().values().all(|l| *l == 6));
        assert!(a.items.values().all(|s| s.len() == 3));
    }

    #[test]
    fn holdout_edges() {
        let all = ids(50);
        assert!(carve_holdout(&all, 0.0, 1).unwrap().is_empty());
        assert_eq!(carve_holdout(&all, 1.0, 1).unwrap().len(), 50);
        assert!(matches!(carve_holdout(&all, 1.2, 1), Err(OrchestrationError::FractionOutOfRange(_))));
        assert!(matches!(carve_holdout(&all, -0.1, 1), Err(OrchestrationError::FractionOutOfRange(_))));
    }

    #[test]
    fn holdout_ignores_input_order() {
        let all = ids(40);
        let mut reversed = all.clone();
        reversed.reverse();
        assert_eq!(carve_holdout(&all, 0.3, 9).unwrap(), carve_holdout(&reversed, 0.3, 9).unwrap());
    }

    #[test]
    fn kenya_holdout_size() {
        let corpus = ids(10_633);
        let holdout = carve_holdout(&corpus, 4980.0 / 10633.0, 42).unwrap();
        assert_eq!(holdout.len(), 4_980);
    }

    fn ann(id: u64, item: &str, who: &str, content: AnnotationContent) -> Annotation {
        Annotation {
            id: AnnotationId(id),
            item_id: item.into(),
            author: Author::Annotator(who.into()),
            round_id: 1,
            content,
            submitted_at: Timestamp::from_millis(0),
            superseded_by: None,
        }
    }

    fn round(items: &[(&str, [u32; 3])]) -> Vec<Annotation> {
        let mut out = Vec::new();
        for (item, classes) in items {
            for (who, c) in ["a", "b", "c"].iter().zip(classes) {
                out.push(ann(out.len() as u64, item, who, AnnotationContent::class(*c)));
            }
        }
        out
    }

    #[test]
    fn calm_round_has_no_reannotation() {
        let schema = LabellingSchema::without_flags();
        let anns = round(&[("p", [0, 0, 0]), ("q", [2, 2, 2])]);
        let summary = summarize_round(1, &anns, &schema, 0.5, Timestamp::from_millis(0));
        assert!(summary.reannotation_queue.is_empty());
        assert_eq!(summary.review_queue, vec![ItemId::from("q")]);
        assert_eq!(summary.labels.len(), 2);
    }

    #[test]
    fn contested_item_is_queued() {
        let schema = LabellingSchema::without_flags();
        let anns = round(&[("p", [0, 0, 0]), ("hot", [0, 1, 2])]);
        let summary = summarize_round(1, &anns, &schema, 0.5, Timestamp::from_millis(0));
        assert_eq!(summary.reannotation_queue, vec![ItemId::from("hot")]);
        assert_eq!(summary.labels.len(), 1);
        assert_eq!(summary.labels[0].item_id, ItemId::from("p"));
    }

    #[test]
    fn marked_item_is_queued() {
        let schema = LabellingSchema::without_flags();
        let mut anns = round(&[("p", [0, 0, 0])]);
        anns[2].content.mark_for_review = true;
        let summary = summarize_round(1, &anns, &schema, 0.5, Timestamp::from_millis(0));
        assert_eq!(summary.reannotation_queue, vec![ItemId::from("p")]);
        assert_eq!(summary.review_queue, vec![ItemId::from("p")]);
    }
}
