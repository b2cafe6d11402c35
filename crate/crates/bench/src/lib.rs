//! Seeded synthetic inputs for the benchmarks.

use concord_core::agreement::ReliabilityTable;
use concord_core::domain::{AnnotationContent, AnnotationId, Annotation, AnnotatorId, Author, ItemId, Timestamp};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Complete table of `items` rows by `annotators` columns over `q` classes.
/// Each row centres on a random class with occasional one-step noise.
pub fn reliability_table(items: usize, annotators: usize, q: u32, seed: u64) -> ReliabilityTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = ReliabilityTable::new(q, annotators);
    for _ in 0..items {
        let centre = rng.random_range(0..q);
        let row = (0..annotators)
            .map(|_| {
                let v = if rng.random_bool(0.2) {
                    (centre + 1).min(q - 1)
                } else {
                    centre
                };
                Some(v)
            })
            .collect();
        table.push_row(row).expect("values within range");
    }
    table
}

/// `items` x `annotators` live annotations on a 3-class scale without flags.
pub fn annotations(items: usize, annotators: usize, seed: u64) -> Vec<Annotation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(items * annotators);
    for i in 0..items {
        for a in 0..annotators {
            let id = AnnotationId(out.len() as u64 + 1);
            out.push(Annotation {
                id,
                item_id: ItemId::new(format!("item-{i:06}")),
                author: Author::Annotator(AnnotatorId::new(format!("ann-{a}"))),
                round_id: 1,
                content: AnnotationContent::class(rng.random_range(0..3)),
                submitted_at: Timestamp::from_millis(0),
                superseded_by: None,
            });
        }
    }
    out
}
