//! Independent reference implementations and fixtures shared by the
//! integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use concord_core::agreement::{DistanceMetric, ReliabilityTable};
use concord_core::dataset::{export_dataset, ExportOptions, HoldoutMode, SplitParameters};
use concord_core::domain::{AnnotationContent, AnnotatorId, CampaignId, Item, ItemId, LabellingSchema};
use concord_core::orchestration::{plan_rounds, sample_pool};
use concord_core::store::{CampaignConfig, Clock, ReviewAction, Store, WorkKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Krippendorff's alpha by direct enumeration of rating pairs.
///
/// Observed disagreement sums every ordered pair of distinct ratings within
/// an item, weighted by 1/(m-1); expected disagreement sums every ordered
/// pair of distinct pairable ratings across the whole table.
pub fn alpha_oracle(rows: &[Vec<Option<u32>>], q: u32, metric: DistanceMetric) -> Option<f64> {
    let items: Vec<Vec<u32>> = rows
        .iter()
        .map(|r| r.iter().flatten().copied().collect::<Vec<_>>())
        .filter(|v| v.len() >= 2)
        .collect();
    let pooled: Vec<u32> = items.iter().flatten().copied().collect();
    let n = pooled.len() as f64;
    if items.is_empty() {
        return None;
    }
    let mut n_c = vec![0.0f64; q as usize];
    for v in &pooled {
        n_c[*v as usize] += 1.0;
    }
    let delta = |a: u32, b: u32| -> f64 {
        match metric {
            DistanceMetric::Nominal => (a != b) as u8 as f64,
            DistanceMetric::Interval => (a as f64 - b as f64).powi(2),
            DistanceMetric::Ordinal => {
                let (lo, hi) = (a.min(b), a.max(b));
                let mut s = 0.0f64;
                for g in lo..=hi {
                    s += n_c[g as usize];
                }
                (s - (n_c[a as usize] + n_c[b as usize]) / 2.0).powi(2)
            }
        }
    };
    let mut d_o = 0.0;
    for values in &items {
        let m = values.len() as f64;
        for (i, a) in values.iter().enumerate() {
            for (j, b) in values.iter().enumerate() {
                if i != j {
                    d_o += delta(*a, *b) / (m - 1.0);
                }
            }
        }
    }
    d_o /= n;
    let mut d_e = 0.0;
    for (i, a) in pooled.iter().enumerate() {
        for (j, b) in pooled.iter().enumerate() {
            if i != j {
                d_e += delta(*a, *b);
            }
        }
    }
    d_e /= n * (n - 1.0);
    if d_e <= 0.0 {
        return None;
    }
    Some(1.0 - d_o / d_e)
}

/// Gwet's AC1 by direct pair enumeration.
pub fn ac1_oracle(rows: &[Vec<Option<u32>>], q: u32) -> Option<f64> {
    if q < 2 {
        return None;
    }
    let items: Vec<Vec<u32>> = rows
        .iter()
        .map(|r| r.iter().flatten().copied().collect::<Vec<_>>())
        .filter(|v| !v.is_empty())
        .collect();
    let mut agreeing = Vec::new();
    for values in items.iter().filter(|v| v.len() >= 2) {
        let mut same = 0usize;
        let mut total = 0usize;
        for (i, a) in values.iter().enumerate() {
            for (j, b) in values.iter().enumerate() {
                if i != j {
                    total += 1;
                    same += (a == b) as usize;
                }
            }
        }
        agreeing.push(same as f64 / total as f64);
    }
    if agreeing.is_empty() {
        return None;
    }
    let p_a = agreeing.iter().sum::<f64>() / agreeing.len() as f64;
    let mut p_e = 0.0;
    for cat in 0..q {
        let pi = items
            .iter()
            .map(|v| v.iter().filter(|x| **x == cat).count() as f64 / v.len() as f64)
            .sum::<f64>()
            / items.len() as f64;
        p_e += pi * (1.0 - pi);
    }
    p_e /= (q - 1) as f64;
    if (1.0 - p_e).abs() < f64::EPSILON {
        return None;
    }
    Some((p_a - p_e) / (1.0 - p_e))
}

/// Plurality with ties broken toward the lower class, by sorting the
/// distinct values on (count descending, value ascending).
pub fn aggregate_oracle(values: &[u32]) -> Option<u32> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(*v).or_default() += 1;
    }
    let mut ranked: Vec<(usize, u32)> = counts.into_iter().map(|(v, c)| (c, v)).collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    ranked.first().map(|(_, v)| *v)
}

/// Every multiset of size `size` over `0..q`, as sorted vectors.
pub fn multisets(q: u32, size: usize) -> Vec<Vec<u32>> {
    fn go(q: u32, size: usize, start: u32, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if current.len() == size {
            out.push(current.clone());
            return;
        }
        for v in start..q {
            current.push(v);
            go(q, size, v, current, out);
            current.pop();
        }
    }
    let mut out = Vec::new();
    go(q, size, 0, &mut Vec::with_capacity(size), &mut out);
    out
}

/// Every distinct table of up to `max_items` rows, `annotators` columns and
/// `q` categories, up to reordering of rows and of cells within a row.
///
/// Both coefficients depend on a row only through its category counts and
/// are sums over rows, so each table is represented by a multiset of rows,
/// each row by a multiset of at most `annotators` ratings.
pub fn tables_up_to_order(q: u32, annotators: usize, max_items: usize) -> Vec<Vec<Vec<Option<u32>>>> {
    let mut rows: Vec<Vec<Option<u32>>> = Vec::new();
    for r in 0..=annotators {
        for ratings in multisets(q, r) {
            let mut row: Vec<Option<u32>> = ratings.into_iter().map(Some).collect();
            row.resize(annotators, None);
            rows.push(row);
        }
    }
    let mut tables = Vec::new();
    for n in 1..=max_items {
        for pick in multisets(rows.len() as u32, n) {
            tables.push(pick.into_iter().map(|i| rows[i as usize].clone()).collect());
        }
    }
    tables
}

pub fn table(q: u32, rows: &[Vec<Option<u32>>]) -> ReliabilityTable {
    let width = rows.first().map_or(0, Vec::len);
    let mut t = ReliabilityTable::new(q, width);
    for r in rows {
        t.push_row(r.clone()).unwrap();
    }
    t
}

pub const PIPELINE_ANNOTATORS: usize = 5;

pub fn pipeline_campaign() -> CampaignId {
    CampaignId::from("pipeline")
}

/// Deterministic simulated annotator: a per-item true class with noise.
pub fn simulated_label(item: &ItemId, annotator: &AnnotatorId, seed: u64) -> AnnotationContent {
    let item_seed = item.as_str().bytes().fold(seed, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
    let truth = ChaCha8Rng::seed_from_u64(item_seed).random_range(0..10u32);
    let truth = match truth {
        0..=6 => 0,
        7..=8 => 1,
        _ => 2,
    };
    let who = annotator.as_str().bytes().fold(item_seed, |h, b| h.wrapping_mul(131).wrapping_add(b as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(who);
    let class = if rng.random_bool(0.15) {
        rng.random_range(0..3)
    } else {
        truth
    };
    let mut content = AnnotationContent::class(class);
    if class == 2 && rng.random_bool(0.5) {
        content = content.with_flag("vilification");
    }
    if rng.random_bool(0.02) {
        content = content.marked();
    }
    content
}

/// Campaign setup: 2,000 synthetic posts, 1,000 sampled, four rounds planned
/// with growth factor 2.
pub fn pipeline_setup(store: &mut Store, seed: u64) {
    let corpus: Vec<Item> = (0..2000)
        .map(|i| Item::new(format!("post-{i:05}"), format!("synthetic post number {i}")))
        .collect();
    let sampled = sample_pool(&corpus, 1000, seed).unwrap();
    let mut config = CampaignConfig::new("pipeline", LabellingSchema::default());
    config.round_plan = Some(plan_rounds(1000, 4, 2.0).unwrap());
    let annotators: Vec<(AnnotatorId, String)> = (0..PIPELINE_ANNOTATORS)
        .map(|i| (AnnotatorId::new(format!("annotator-{i}")), format!("secret-{i}")))
        .collect();
    store.create_campaign(pipeline_campaign(), config, &annotators).unwrap();
    store.import_items(&pipeline_campaign(), sampled).unwrap();
}

/// Submits the open round's pending work, stopping after `limit` submissions.
/// Returns the number submitted.
pub fn pipeline_submit(store: &mut Store, seed: u64, limit: usize) -> usize {
    let c = store.campaign(&pipeline_campaign()).unwrap();
    let round = c.open_round().unwrap().id;
    let annotators: Vec<AnnotatorId> = c.annotators.keys().cloned().collect();
    let mut done = 0;
    for a in annotators {
        for entry in store.next_queue(&pipeline_campaign(), &a).unwrap() {
            if done == limit {
                return done;
            }
            let content = simulated_label(&entry.item_id, &a, seed);
            let key = format!("{}:{}:{}", a, entry.item_id, round);
            if entry.kind == WorkKind::Review {
                let action = if content.class_value >= 1 { ReviewAction::Confirm } else { ReviewAction::Amend };
                store
                    .submit_review(&pipeline_campaign(), &a, &entry.item_id, round, action, content, &key)
                    .unwrap();
            } else {
                store
                    .submit_annotation(&pipeline_campaign(), &a, &entry.item_id, round, content, &key)
                    .unwrap();
            }
            done += 1;
        }
    }
    done
}

/// Harmonises items awaiting deliberation to their true class. Unless
/// `all` is set, only items already re-annotated in a later round are
/// harmonised; the rest go back for re-annotation first.
pub fn pipeline_harmonise(store: &mut Store, seed: u64, all: bool) {
    let c = store.campaign(&pipeline_campaign()).unwrap();
    let contested: Vec<_> = store
        .deliberation(&pipeline_campaign())
        .unwrap()
        .into_iter()
        .filter(|item| {
            let rounds: std::collections::BTreeSet<_> =
                c.by_item[&item.item_id].iter().map(|id| c.annotations[id].round_id).collect();
            all || rounds.len() >= 2
        })
        .collect();
    for item in contested {
        let consensus = simulated_label(&item.item_id, &AnnotatorId::from("consensus"), seed);
        store
            .harmonise(&pipeline_campaign(), &item.item_id, format!("session-{}", item.queued_in_round).into(), consensus)
            .unwrap();
    }
}

/// Runs the remaining rounds to completion, then carves the holdout and
/// exports the splits. Returns the fresh-item count of each round opened.
pub fn pipeline_finish(store: &mut Store, seed: u64, out: &Path) -> Vec<usize> {
    let mut fresh_sizes = Vec::new();
    loop {
        let c = store.campaign(&pipeline_campaign()).unwrap();
        let open = c.open_round().map(|r| r.id);
        let round = match open {
            Some(r) => r,
            None => {
                let next = c.last_round_id() + 1;
                if next > 4 {
                    break;
                }
                store.open_round(&pipeline_campaign(), None, seed + next as u64).unwrap()
            }
        };
        let c = store.campaign(&pipeline_campaign()).unwrap();
        let r = &c.rounds[&round];
        let fresh = r
            .work
            .values()
            .flat_map(|m| m.iter())
            .filter(|(_, w)| w.kind == WorkKind::Fresh)
            .map(|(i, _)| i.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .len();
        fresh_sizes.push(fresh);
        pipeline_submit(store, seed, usize::MAX);
        store.close_round(&pipeline_campaign(), round, false).unwrap();
        pipeline_harmonise(store, seed, round == 4);
    }
    store.carve_holdout(&pipeline_campaign(), 0.2, seed).unwrap();
    let splits = store
        .splits(&pipeline_campaign(), HoldoutMode::Separate, 0.25, seed, true)
        .unwrap();
    export_dataset(
        &splits,
        SplitParameters {
            seed,
            test_fraction: 0.25,
            stratified: true,
            holdout_mode: HoldoutMode::Separate,
        },
        ExportOptions {
            include_flags: true,
            csv: true,
        },
        out,
    )
    .unwrap();
    fresh_sizes
}

/// Every file in `dir`, by name.
pub fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect()
}

pub fn fixed_clock() -> Arc<dyn Clock> {
    Arc::new(concord_core::store::ManualClock::default())
}
