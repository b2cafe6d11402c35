//! Label aggregation with the conservative tie rule.
//!
//! A class wins outright only with a strictly maximal vote count. When two or
//! more classes share the top count, the lowest of them is taken, so the
//! positive rate of aggregated labels is a lower bound.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::domain::{
    collapse_binary, AggregateLabel, AggregationMethod, Annotation, AnnotationId, ItemId, LabellingSchema,
    ReviewPolicy,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AggregationError {
    #[error("no annotations to aggregate")]
    NoAnnotations,
    #[error("class {0} out of scale")]
    ClassOutOfScale(u32),
}

/// Plurality vote over class values; ties resolve to the lowest tied class.
pub fn aggregate_classification(
    class_values: &[u32],
    schema: &LabellingSchema,
) -> Result<(u32, AggregationMethod), AggregationError> {
    if class_values.is_empty() {
        return Err(AggregationError::NoAnnotations);
    }
    let mut counts = vec![0usize; schema.class_count() as usize];
    for &v in class_values {
        *counts
            .get_mut(v as usize)
            .ok_or(AggregationError::ClassOutOfScale(v))? += 1;
    }
    let top = *counts.iter().max().expect("non-empty scale");
    let mut tied = counts.iter().enumerate().filter(|(_, c)| **c == top).map(|(v, _)| v as u32);
    let lowest = tied.next().expect("maximum exists");
    if tied.next().is_some() {
        Ok((lowest, AggregationMethod::TieLower))
    } else {
        Ok((lowest, AggregationMethod::Plurality))
    }
}

/// Flags asserted by strictly more than half of the annotations.
pub fn aggregate_flags(
    annotations: &[&Annotation],
    schema: &LabellingSchema,
) -> Result<BTreeSet<String>, AggregationError> {
    if annotations.is_empty() {
        return Err(AggregationError::NoAnnotations);
    }
    let n = annotations.len();
    Ok(schema
        .flags
        .iter()
        .filter(|flag| 2 * annotations.iter().filter(|a| a.has_flag(flag)).count() > n)
        .cloned()
        .collect())
}

/// Whether an item goes to broadcast review.
///
/// Review marks always route the item, under either policy.
pub fn needs_review(annotations: &[&Annotation], policy: ReviewPolicy, schema: &LabellingSchema) -> bool {
    if annotations.is_empty() {
        return false;
    }
    if annotations.iter().any(|a| a.content.mark_for_review) {
        return true;
    }
    match policy {
        ReviewPolicy::AnyPositive => annotations.iter().any(|a| a.class_value() >= 1),
        ReviewPolicy::AggregatePositive => {
            let values: Vec<u32> = annotations.iter().map(|a| a.class_value()).collect();
            matches!(aggregate_classification(&values, schema), Ok((class, _)) if class >= 1)
        }
    }
}

/// Aggregates one item's live annotations into a label.
pub fn aggregate_item(
    item_id: &ItemId,
    annotations: &[&Annotation],
    schema: &LabellingSchema,
) -> Result<AggregateLabel, AggregationError> {
    let values: Vec<u32> = annotations.iter().map(|a| a.class_value()).collect();
    let (final_class, method) = aggregate_classification(&values, schema)?;
    Ok(AggregateLabel {
        item_id: item_id.clone(),
        final_class,
        method,
        flag_consensus: aggregate_flags(annotations, schema)?,
        contributing_annotations: contributing_ids(annotations),
    })
}

/// Label produced by a harmonisation session's consensus record.
pub fn harmonised_label(record: &Annotation) -> AggregateLabel {
    AggregateLabel {
        item_id: record.item_id.clone(),
        final_class: record.class_value(),
        method: AggregationMethod::Harmonised,
        flag_consensus: record.content.flags.clone(),
        contributing_annotations: vec![record.id],
    }
}

/// CSV of aggregate labels: `item_id,final_class,binary_label,method,flags`.
pub fn labels_csv(labels: &[AggregateLabel], schema: &LabellingSchema) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(["item_id", "final_class", "binary_label", "method", "flags"])
        .expect("in-memory write");
    for label in labels {
        let binary = collapse_binary(label.final_class, schema).map_or(0, |b| b.as_u8());
        let flags: Vec<&str> = label.flag_consensus.iter().map(String::as_str).collect();
        writer
            .write_record([
                label.item_id.as_str(),
                &label.final_class.to_string(),
                &binary.to_string(),
                label.method.as_str(),
                &flags.join(";"),
            ])
            .expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("flush")).expect("utf-8 csv")
}

/// Annotation ids as a convenience for provenance listings.
pub fn contributing_ids(annotations: &[&Annotation]) -> Vec<AnnotationId> {
    annotations.iter().map(|a| a.id).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{AnnotationContent, Author, Timestamp};

    fn ann(i: u64, content: AnnotationContent) -> Annotation {
        Annotation {
            id: AnnotationId(i),
            item_id: "x".into(),
            author: Author::Annotator(format!("r{i}").into()),
            round_id: 1,
            content,
            submitted_at: Timestamp::from_millis(0),
            superseded_by: None,
        }
    }

    fn classes(values: &[u32]) -> Vec<Annotation> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| ann(i as u64, AnnotationContent::class(*v)))
            .collect()
    }

    #[test]
    fn classification_examples() {
        let s = LabellingSchema::default();
        assert_eq!(aggregate_classification(&[2, 2, 0], &s), Ok((2, AggregationMethod::Plurality)));
        assert_eq!(aggregate_classification(&[0, 1, 2], &s), Ok((0, AggregationMethod::TieLower)));
        assert_eq!(aggregate_classification(&[1, 1, 2, 2], &s), Ok((1, AggregationMethod::TieLower)));
        assert_eq!(aggregate_classification(&[], &s), Err(AggregationError::NoAnnotations));
        assert_eq!(aggregate_classification(&[4], &s), Err(AggregationError::ClassOutOfScale(4)));
    }

    #[test]
    fn flag_majority_is_strict() {
        let s = LabellingSchema::default();
        let three = [ann(0, AnnotationContent::class(1).with_flag("vilification")),
            ann(1, AnnotationContent::class(1).with_flag("vilification")),
            ann(2, AnnotationContent::class(0))];
        let refs: Vec<&Annotation> = three.iter().collect();
        assert_eq!(aggregate_flags(&refs, &s).unwrap(), BTreeSet::from(["vilification".to_owned()]));

        let four = [ann(0, AnnotationContent::class(1).with_flag("vilification")),
            ann(1, AnnotationContent::class(1).with_flag("vilification")),
            ann(2, AnnotationContent::class(0)),
            ann(3, AnnotationContent::class(0))];
        let refs: Vec<&Annotation> = four.iter().collect();
        assert!(aggregate_flags(&refs, &s).unwrap().is_empty());

        let none = classes(&[0, 1, 2]);
        let refs: Vec<&Annotation> = none.iter().collect();
        assert!(aggregate_flags(&refs, &s).unwrap().is_empty());
        assert_eq!(aggregate_flags(&[], &s), Err(AggregationError::NoAnnotations));
    }

    #[test]
    fn review_routing() {
        let s = LabellingSchema::default();
        let quiet = classes(&[0, 0, 0]);
        let refs: Vec<&Annotation> = quiet.iter().collect();
        assert!(!needs_review(&refs, ReviewPolicy::AnyPositive, &s));
        assert!(!needs_review(&refs, ReviewPolicy::AggregatePositive, &s));

        let lone = classes(&[0, 2, 0]);
        let refs: Vec<&Annotation> = lone.iter().collect();
        assert!(needs_review(&refs, ReviewPolicy::AnyPositive, &s));
        assert!(!needs_review(&refs, ReviewPolicy::AggregatePositive, &s));

        let mut marked = classes(&[0, 0, 0]);
        marked[1].content.mark_for_review = true;
        let refs: Vec<&Annotation> = marked.iter().collect();
        assert!(needs_review(&refs, ReviewPolicy::AnyPositive, &s));
        assert!(needs_review(&refs, ReviewPolicy::AggregatePositive, &s));

        assert!(!needs_review(&[], ReviewPolicy::AnyPositive, &s));
    }

    #[test]
    fn labels_csv_layout() {
        let s = LabellingSchema::default();
        let anns = [ann(0, AnnotationContent::class(2).with_flag("vilification").with_flag("dehumanisation")),
            ann(1, AnnotationContent::class(2).with_flag("vilification").with_flag("dehumanisation"))];
        let refs: Vec<&Annotation> = anns.iter().collect();
        let label = aggregate_item(&"x".into(), &refs, &s).unwrap();
        assert_eq!(label.contributing_annotations, contributing_ids(&refs));
        assert_eq!(
            labels_csv(&[label], &s),
            "item_id,final_class,binary_label,method,flags\nx,2,1,plurality,dehumanisation;vilification\n"
        );
    }

    #[test]
    fn harmonised_label_takes_consensus() {
        let record = ann(5, AnnotationContent::class(1));
        let label = harmonised_label(&record);
        assert_eq!(label.final_class, 1);
        assert_eq!(label.method, AggregationMethod::Harmonised);
    }
}
