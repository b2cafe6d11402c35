//! Materialized campaign state: a deterministic fold over the event log.
//!
//! `State::apply` validates an event against the current state before it
//! touches anything, so a rejected event leaves the state unchanged.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::agreement::{agreement_report, item_disagreement, AgreementReport, ReportOptions};
use crate::aggregation::{aggregate_item, harmonised_label};
use crate::dataset::LabelledItem;
use crate::domain::{
    collapse_binary, validate_content, validate_schema, AggregateLabel, AggregationMethod, Annotation,
    AnnotationContent, AnnotationId, AnnotatorId, Author, CampaignId, Item, ItemId, LabellingSchema, RoundId,
    Timestamp,
};
use crate::orchestration::{summarize_round, RoundPlan, RoundSummary};

use super::event::{Event, EventKind};
use super::StoreError;

/// Campaign-wide settings fixed at creation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub name: String,
    pub schema: LabellingSchema,
    /// Annotators per item; defaults to the schema minimum.
    #[serde(default)]
    pub annotators_per_item: Option<usize>,
    #[serde(default)]
    pub round_plan: Option<RoundPlan>,
    /// Defaults to the schema's high-disagreement threshold.
    #[serde(default)]
    pub reannotation_threshold: Option<f64>,
    /// Pseudonymize annotators in deliberation views.
    #[serde(default = "default_true")]
    pub anonymize_deliberation: bool,
}

fn default_true() -> bool {
    true
}

impl CampaignConfig {
    pub fn new(name: impl Into<String>, schema: LabellingSchema) -> Self {
        Self {
            name: name.into(),
            schema,
            annotators_per_item: None,
            round_plan: None,
            reannotation_threshold: None,
            anonymize_deliberation: true,
        }
    }

    pub fn annotators_per_item(&self) -> usize {
        self.annotators_per_item.unwrap_or(self.schema.min_annotators_per_item)
    }

    pub fn reannotation_threshold(&self) -> f64 {
        self.reannotation_threshold
            .unwrap_or(self.schema.high_disagreement_threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorRecord {
    pub id: AnnotatorId,
    /// Hex SHA-256 of the annotator's bearer token.
    pub token_sha256: String,
}

/// Kind of work, in queue priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkKind {
    Reannotation,
    Review,
    Fresh,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WorkUnit {
    pub item_id: ItemId,
    pub annotator_id: AnnotatorId,
    pub kind: WorkKind,
}

/// Reviewer response to a broadcast positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReviewAction {
    Confirm,
    Amend,
    /// Send the item to deliberation when the round closes.
    Escalate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoundStatus {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssuedWork {
    pub kind: WorkKind,
    pub issued_at: Timestamp,
    pub expired: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub id: RoundId,
    pub seed: u64,
    pub status: RoundStatus,
    pub opened_at: Timestamp,
    pub closed_at: Option<Timestamp>,
    /// Items in presentation order: re-annotation, review, then fresh.
    pub items: Vec<ItemId>,
    pub work: BTreeMap<AnnotatorId, BTreeMap<ItemId, IssuedWork>>,
    pub summary: Option<RoundSummary>,
}

impl Round {
    pub fn is_open(&self) -> bool {
        self.status == RoundStatus::Open
    }

    fn unit(&self, annotator: &AnnotatorId, item: &ItemId) -> Option<&IssuedWork> {
        self.work.get(annotator).and_then(|m| m.get(item))
    }

    pub fn load(&self, annotator: &AnnotatorId) -> usize {
        self.work
            .get(annotator)
            .map_or(0, |m| m.values().filter(|w| !w.expired).count())
    }
}

/// Acknowledgement returned for a recorded submission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub sequence: u64,
    pub annotation_id: AnnotationId,
    pub round_id: RoundId,
    pub item_id: ItemId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Holdout {
    pub fraction: f64,
    pub seed: u64,
    pub items: BTreeSet<ItemId>,
}

/// An entry in an annotator's work queue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub round_id: RoundId,
    pub item_id: ItemId,
    pub kind: WorkKind,
    pub text: String,
}

/// A contested item as shown to a deliberation session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContestedItem {
    pub item_id: ItemId,
    pub text: String,
    pub queued_in_round: RoundId,
    pub score: Option<f64>,
    pub labels: Vec<ContestedLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContestedLabel {
    pub annotator: String,
    #[serde(flatten)]
    pub content: AnnotationContent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    pub id: CampaignId,
    pub config: CampaignConfig,
    pub created_at: Timestamp,
    pub annotators: BTreeMap<AnnotatorId, AnnotatorRecord>,
    pub items: BTreeMap<ItemId, Item>,
    /// Import order; fresh items are drawn from here.
    pub pool: Vec<ItemId>,
    /// Items that have entered a round as fresh work.
    pub introduced: BTreeSet<ItemId>,
    pub rounds: BTreeMap<RoundId, Round>,
    pub annotations: BTreeMap<AnnotationId, Annotation>,
    pub by_item: BTreeMap<ItemId, Vec<AnnotationId>>,
    /// Annotations that came in as broadcast-review responses.
    pub reviews: BTreeMap<AnnotationId, ReviewAction>,
    /// Items that have already been broadcast for review.
    pub broadcast: BTreeSet<ItemId>,
    pub idempotency: BTreeMap<AnnotatorId, BTreeMap<String, Ack>>,
    pub pending_reannotation: Vec<ItemId>,
    pub pending_review: Vec<ItemId>,
    /// Items eligible for harmonisation, with the round that queued them.
    pub deliberation: BTreeMap<ItemId, RoundId>,
    pub holdout: Option<Holdout>,
}

impl Campaign {
    pub fn schema(&self) -> &LabellingSchema {
        &self.config.schema
    }

    pub fn open_round(&self) -> Option<&Round> {
        self.rounds.values().find(|r| r.is_open())
    }

    pub fn last_round_id(&self) -> RoundId {
        self.rounds.keys().next_back().copied().unwrap_or(0)
    }

    pub fn round(&self, round_id: RoundId) -> Result<&Round, StoreError> {
        self.rounds.get(&round_id).ok_or(StoreError::UnknownRound(round_id))
    }

    pub fn is_holdout(&self, item: &ItemId) -> bool {
        self.holdout.as_ref().is_some_and(|h| h.items.contains(item))
    }

    /// Fresh items not yet introduced in any round, in pool order.
    pub fn unused_items(&self) -> impl Iterator<Item = &ItemId> {
        self.pool
            .iter()
            .filter(|id| !self.introduced.contains(*id) && !self.is_holdout(id))
    }

    pub fn live_annotations(&self, item: &ItemId) -> Vec<&Annotation> {
        self.by_item
            .get(item)
            .into_iter()
            .flatten()
            .map(|id| &self.annotations[id])
            .filter(|a| a.is_live())
            .collect()
    }

    /// Authors who have ever annotated the item, live or not.
    pub fn authors_of(&self, item: &ItemId) -> BTreeSet<&AnnotatorId> {
        self.by_item
            .get(item)
            .into_iter()
            .flatten()
            .filter_map(|id| match &self.annotations[id].author {
                Author::Annotator(a) => Some(a),
                Author::Session(_) => None,
            })
            .collect()
    }

    /// Annotations an item's label rests on: the session record if
    /// harmonised; otherwise the live annotations from the item's latest
    /// annotation round plus any later review responses.
    pub fn label_basis(&self, item: &ItemId) -> Vec<&Annotation> {
        let live = self.live_annotations(item);
        if let Some(session) = live.iter().find(|a| matches!(a.author, Author::Session(_))) {
            return vec![*session];
        }
        let is_review = |a: &Annotation| self.reviews.contains_key(&a.id);
        let base_round = live.iter().filter(|a| !is_review(a)).map(|a| a.round_id).max();
        match base_round {
            None => live,
            Some(base) => live
                .into_iter()
                .filter(|a| if is_review(a) { a.round_id > base } else { a.round_id == base })
                .collect(),
        }
    }

    pub fn final_label(&self, item: &ItemId) -> Option<AggregateLabel> {
        let basis = self.label_basis(item);
        let first = basis.first()?;
        if matches!(first.author, Author::Session(_)) {
            return Some(harmonised_label(first));
        }
        let mut label = aggregate_item(item, &basis, self.schema()).ok()?;
        let confirmed = basis
            .iter()
            .any(|a| self.reviews.get(&a.id) == Some(&ReviewAction::Confirm));
        if confirmed && label.final_class >= 1 {
            label.method = AggregationMethod::ReviewConfirmed;
        }
        Some(label)
    }

    /// Current disagreement for an item; 0 once harmonised.
    pub fn item_score(&self, item: &ItemId) -> Option<f64> {
        let basis = self.label_basis(item);
        if basis.first().is_some_and(|a| matches!(a.author, Author::Session(_))) {
            return Some(0.0);
        }
        item_disagreement(&basis, self.schema()).ok()
    }

    /// Final labels for every annotated item, by item id.
    pub fn labels(&self) -> Vec<AggregateLabel> {
        self.by_item.keys().filter_map(|item| self.final_label(item)).collect()
    }

    /// Items with a settled label: labelled and not waiting for re-annotation.
    pub fn labelled_corpus(&self) -> Vec<LabelledItem> {
        let pending: BTreeSet<&ItemId> = self.pending_reannotation.iter().collect();
        self.labels()
            .into_iter()
            .filter(|l| !pending.contains(&l.item_id))
            .map(|l| LabelledItem {
                text: self.items[&l.item_id].text.clone(),
                binary: collapse_binary(l.final_class, self.schema()).expect("label within scale"),
                class_value: l.final_class,
                flags: l.flag_consensus,
                id: l.item_id,
            })
            .collect()
    }

    /// Agreement across every round, keeping each author's latest annotation.
    pub fn cumulative_agreement(&self, computed_at: Timestamp, options: ReportOptions) -> AgreementReport {
        let all: Vec<Annotation> = self.annotations.values().cloned().collect();
        agreement_report(&all, self.schema(), None, computed_at, options)
    }

    pub fn round_annotations(&self, round_id: RoundId) -> Vec<Annotation> {
        self.annotations
            .values()
            .filter(|a| a.round_id == round_id)
            .cloned()
            .collect()
    }

    /// Pending work for an annotator: re-annotation and review first, then
    /// fresh items, each group in round order.
    pub fn next_queue(&self, annotator: &AnnotatorId) -> Result<Vec<QueueEntry>, StoreError> {
        if !self.annotators.contains_key(annotator) {
            return Err(StoreError::UnknownAnnotator(annotator.clone()));
        }
        let Some(round) = self.open_round() else {
            return Ok(Vec::new());
        };
        let Some(work) = round.work.get(annotator) else {
            return Ok(Vec::new());
        };
        let author = Author::Annotator(annotator.clone());
        let position: BTreeMap<&ItemId, usize> = round.items.iter().enumerate().map(|(i, id)| (id, i)).collect();
        let mut entries: Vec<(WorkKind, usize, QueueEntry)> = work
            .iter()
            .filter(|(item, unit)| {
                !unit.expired
                    && !self.is_holdout(item)
                    && !self
                        .live_annotations(item)
                        .iter()
                        .any(|a| a.author == author && a.round_id == round.id)
            })
            .map(|(item, unit)| {
                (
                    unit.kind,
                    position.get(item).copied().unwrap_or(usize::MAX),
                    QueueEntry {
                        round_id: round.id,
                        item_id: item.clone(),
                        kind: unit.kind,
                        text: self.items[item].text.clone(),
                    },
                )
            })
            .collect();
        entries.sort_by(|a, b| {
            let group = |k: WorkKind| (k == WorkKind::Fresh) as u8;
            (group(a.0), a.1).cmp(&(group(b.0), b.1))
        });
        Ok(entries.into_iter().map(|(_, _, e)| e).collect())
    }

    /// Unresolved contested items, highest disagreement first.
    pub fn deliberation_queue(&self) -> Vec<ContestedItem> {
        let mut out: Vec<ContestedItem> = self
            .deliberation
            .iter()
            .filter(|(item, _)| self.pending_reannotation.contains(item))
            .map(|(item, round)| {
                let basis = self.label_basis(item);
                let labels = basis
                    .iter()
                    .enumerate()
                    .map(|(i, a)| ContestedLabel {
                        annotator: if self.config.anonymize_deliberation {
                            pseudonym(i)
                        } else {
                            match &a.author {
                                Author::Annotator(id) => id.to_string(),
                                Author::Session(s) => s.to_string(),
                            }
                        },
                        content: a.content.clone(),
                    })
                    .collect();
                ContestedItem {
                    item_id: item.clone(),
                    text: self.items[item].text.clone(),
                    queued_in_round: *round,
                    score: self.item_score(item),
                    labels,
                }
            })
            .collect();
        out.sort_by(|a, b| {
            b.score
                .unwrap_or(0.0)
                .total_cmp(&a.score.unwrap_or(0.0))
                .then_with(|| a.item_id.cmp(&b.item_id))
        });
        out
    }

    fn find_ack(&self, annotator: &AnnotatorId, key: &str) -> Option<&Ack> {
        self.idempotency.get(annotator).and_then(|m| m.get(key))
    }

    pub fn ack_for(&self, annotator: &AnnotatorId, key: &str) -> Option<Ack> {
        self.find_ack(annotator, key).cloned()
    }
}

/// "Annotator A", "Annotator B", ... "Annotator AA".
fn pseudonym(index: usize) -> String {
    let mut n = index;
    let mut letters = Vec::new();
    loop {
        letters.push((b'A' + (n % 26) as u8) as char);
        if n < 26 {
            break;
        }
        n = n / 26 - 1;
    }
    letters.reverse();
    format!("Annotator {}", letters.into_iter().collect::<String>())
}

/// Every campaign, plus the sequence number of the last applied event.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub last_sequence: u64,
    pub campaigns: BTreeMap<CampaignId, Campaign>,
}

impl State {
    pub fn campaign(&self, id: &CampaignId) -> Result<&Campaign, StoreError> {
        self.campaigns
            .get(id)
            .ok_or_else(|| StoreError::UnknownCampaign(id.clone()))
    }

    fn campaign_mut(&mut self, id: &CampaignId) -> Result<&mut Campaign, StoreError> {
        self.campaigns
            .get_mut(id)
            .ok_or_else(|| StoreError::UnknownCampaign(id.clone()))
    }

    /// Deterministic JSON image of the state.
    pub fn snapshot_json(&self) -> String {
        serde_json::to_string(self).expect("state serializes")
    }

    pub fn apply(&mut self, event: &Event) -> Result<(), StoreError> {
        let expected = self.last_sequence + 1;
        if event.sequence != expected {
            return Err(StoreError::SequenceGap {
                expected,
                found: event.sequence,
            });
        }
        let at = event.recorded_at;
        let seq = event.sequence;
        match &event.kind {
            EventKind::CampaignCreated {
                campaign_id,
                config,
                annotators,
            } => {
                if self.campaigns.contains_key(campaign_id) {
                    return Err(StoreError::CampaignExists(campaign_id.clone()));
                }
                validate_schema(&config.schema).map_err(StoreError::InvalidSchema)?;
                let mut records = BTreeMap::new();
                for a in annotators {
                    if records.insert(a.id.clone(), a.clone()).is_some() {
                        return Err(StoreError::InvalidConfig(format!("duplicate annotator '{}'", a.id)));
                    }
                }
                let k = config.annotators_per_item();
                if k == 0 || k > records.len() {
                    return Err(StoreError::InvalidConfig(format!(
                        "{k} annotators per item requested, {} registered",
                        records.len()
                    )));
                }
                let t = config.reannotation_threshold();
                if !(0.0..=1.0).contains(&t) {
                    return Err(StoreError::InvalidConfig(format!("re-annotation threshold {t} outside [0, 1]")));
                }
                self.campaigns.insert(
                    campaign_id.clone(),
                    Campaign {
                        id: campaign_id.clone(),
                        config: config.clone(),
                        created_at: at,
                        annotators: records,
                        items: BTreeMap::new(),
                        pool: Vec::new(),
                        introduced: BTreeSet::new(),
                        rounds: BTreeMap::new(),
                        annotations: BTreeMap::new(),
                        by_item: BTreeMap::new(),
                        reviews: BTreeMap::new(),
                        broadcast: BTreeSet::new(),
                        idempotency: BTreeMap::new(),
                        pending_reannotation: Vec::new(),
                        pending_review: Vec::new(),
                        deliberation: BTreeMap::new(),
                        holdout: None,
                    },
                );
            }
            EventKind::ItemsImported { campaign_id, items } => {
                let campaign = self.campaign_mut(campaign_id)?;
                let mut batch = BTreeSet::new();
                for item in items {
                    if item.text.trim().is_empty() {
                        return Err(StoreError::EmptyText(item.id.clone()));
                    }
                    if campaign.items.contains_key(&item.id) || !batch.insert(&item.id) {
                        return Err(StoreError::DuplicateItem(item.id.clone()));
                    }
                }
                for item in items {
                    campaign.pool.push(item.id.clone());
                    campaign.items.insert(item.id.clone(), item.clone());
                }
            }
            EventKind::RoundOpened {
                campaign_id,
                round_id,
                seed,
                items,
                units,
            } => {
                let campaign = self.campaign_mut(campaign_id)?;
                if let Some(open) = campaign.open_round() {
                    return Err(StoreError::RoundStillOpen(open.id));
                }
                if *round_id != campaign.last_round_id() + 1 {
                    return Err(StoreError::UnknownRound(*round_id));
                }
                let listed: BTreeSet<&ItemId> = items.iter().collect();
                for item in items {
                    if !campaign.items.contains_key(item) {
                        return Err(StoreError::UnknownItem(item.clone()));
                    }
                    if campaign.is_holdout(item) {
                        return Err(StoreError::HoldoutItem(item.clone()));
                    }
                }
                let mut work: BTreeMap<AnnotatorId, BTreeMap<ItemId, IssuedWork>> = BTreeMap::new();
                for unit in units {
                    if !listed.contains(&unit.item_id) {
                        return Err(StoreError::UnknownItem(unit.item_id.clone()));
                    }
                    if !campaign.annotators.contains_key(&unit.annotator_id) {
                        return Err(StoreError::UnknownAnnotator(unit.annotator_id.clone()));
                    }
                    let issued = IssuedWork {
                        kind: unit.kind,
                        issued_at: at,
                        expired: false,
                    };
                    if work
                        .entry(unit.annotator_id.clone())
                        .or_default()
                        .insert(unit.item_id.clone(), issued)
                        .is_some()
                    {
                        return Err(StoreError::InvalidConfig(format!(
                            "'{}' assigned '{}' twice",
                            unit.annotator_id, unit.item_id
                        )));
                    }
                }
                for unit in units {
                    match unit.kind {
                        WorkKind::Fresh => {
                            campaign.introduced.insert(unit.item_id.clone());
                        }
                        WorkKind::Review => {
                            campaign.broadcast.insert(unit.item_id.clone());
                        }
                        WorkKind::Reannotation => {}
                    }
                }
                campaign.pending_reannotation.retain(|i| !listed.contains(i));
                campaign.pending_review.retain(|i| !listed.contains(i));
                campaign.rounds.insert(
                    *round_id,
                    Round {
                        id: *round_id,
                        seed: *seed,
                        status: RoundStatus::Open,
                        opened_at: at,
                        closed_at: None,
                        items: items.clone(),
                        work,
                        summary: None,
                    },
                );
            }
            EventKind::AssignmentIssued {
                campaign_id,
                round_id,
                units,
                expired,
            } => {
                let campaign = self.campaign_mut(campaign_id)?;
                let round = campaign.round(*round_id)?;
                if !round.is_open() {
                    return Err(StoreError::RoundClosed(*round_id));
                }
                for unit in expired {
                    if round.unit(&unit.annotator_id, &unit.item_id).is_none_or(|w| w.expired) {
                        return Err(StoreError::NoSuchAssignment {
                            annotator: unit.annotator_id.clone(),
                            item: unit.item_id.clone(),
                            round: *round_id,
                        });
                    }
                }
                for unit in units {
                    if !campaign.annotators.contains_key(&unit.annotator_id) {
                        return Err(StoreError::UnknownAnnotator(unit.annotator_id.clone()));
                    }
                    if !round.items.contains(&unit.item_id) {
                        return Err(StoreError::UnknownItem(unit.item_id.clone()));
                    }
                    if round.unit(&unit.annotator_id, &unit.item_id).is_some() {
                        return Err(StoreError::InvalidConfig(format!(
                            "'{}' already assigned '{}'",
                            unit.annotator_id, unit.item_id
                        )));
                    }
                }
                let round = campaign.rounds.get_mut(round_id).expect("checked");
                for unit in expired {
                    if let Some(w) = round
                        .work
                        .get_mut(&unit.annotator_id)
                        .and_then(|m| m.get_mut(&unit.item_id))
                    {
                        w.expired = true;
                    }
                }
                for unit in units {
                    round.work.entry(unit.annotator_id.clone()).or_default().insert(
                        unit.item_id.clone(),
                        IssuedWork {
                            kind: unit.kind,
                            issued_at: at,
                            expired: false,
                        },
                    );
                }
            }
            EventKind::AnnotationSubmitted {
                campaign_id,
                round_id,
                item_id,
                annotator_id,
                content,
                idempotency_key,
            } => {
                let campaign = self.campaign_mut(campaign_id)?;
                check_submission(campaign, *round_id, item_id, annotator_id, content, idempotency_key, false)?;
                record(campaign, seq, at, *round_id, item_id, annotator_id, content, idempotency_key);
            }
            EventKind::ReviewSubmitted {
                campaign_id,
                round_id,
                item_id,
                annotator_id,
                action,
                content,
                idempotency_key,
            } => {
                let campaign = self.campaign_mut(campaign_id)?;
                check_submission(campaign, *round_id, item_id, annotator_id, content, idempotency_key, true)?;
                record(campaign, seq, at, *round_id, item_id, annotator_id, content, idempotency_key);
                campaign.reviews.insert(AnnotationId(seq), *action);
            }
            EventKind::ItemHarmonised {
                campaign_id,
                item_id,
                session_ref,
                consensus,
            } => {
                let campaign = self.campaign_mut(campaign_id)?;
                if !campaign.items.contains_key(item_id) {
                    return Err(StoreError::UnknownItem(item_id.clone()));
                }
                let Some(&queued_in) = campaign.deliberation.get(item_id) else {
                    return Err(StoreError::NotInDeliberation(item_id.clone()));
                };
                let live: Vec<AnnotationId> = campaign.live_annotations(item_id).iter().map(|a| a.id).collect();
                if live.is_empty() {
                    return Err(StoreError::NoAnnotations(item_id.clone()));
                }
                validate_content(consensus, campaign.schema()).map_err(StoreError::InvalidContent)?;
                let id = AnnotationId(seq);
                for old in live {
                    campaign.annotations.get_mut(&old).expect("indexed").superseded_by = Some(id);
                }
                campaign.annotations.insert(
                    id,
                    Annotation {
                        id,
                        item_id: item_id.clone(),
                        author: Author::Session(session_ref.clone()),
                        round_id: queued_in,
                        content: consensus.clone(),
                        submitted_at: at,
                        superseded_by: None,
                    },
                );
                campaign.by_item.entry(item_id.clone()).or_default().push(id);
                campaign.pending_reannotation.retain(|i| i != item_id);
            }
            EventKind::RoundClosed {
                campaign_id,
                round_id,
                expired,
            } => {
                let campaign = self.campaign_mut(campaign_id)?;
                let round = campaign.round(*round_id)?;
                if !round.is_open() {
                    return Err(StoreError::RoundAlreadyClosed {
                        summary: Box::new(round.summary.clone().expect("closed rounds have summaries")),
                    });
                }
                let expiring: BTreeSet<(&AnnotatorId, &ItemId)> =
                    expired.iter().map(|u| (&u.annotator_id, &u.item_id)).collect();
                let outstanding = pending_units(campaign, round)
                    .into_iter()
                    .filter(|u| !expiring.contains(&(&u.annotator_id, &u.item_id)))
                    .count();
                if outstanding > 0 {
                    return Err(StoreError::PendingAssignments {
                        round: *round_id,
                        count: outstanding,
                    });
                }
                close(campaign, *round_id, expired, at);
            }
            EventKind::HoldoutCarved {
                campaign_id,
                fraction,
                seed,
                items,
            } => {
                let campaign = self.campaign_mut(campaign_id)?;
                if campaign.holdout.is_some() {
                    return Err(StoreError::HoldoutExists);
                }
                if !(0.0..=1.0).contains(fraction) {
                    return Err(StoreError::InvalidConfig(format!("holdout fraction {fraction} outside [0, 1]")));
                }
                for item in items {
                    if !campaign.items.contains_key(item) {
                        return Err(StoreError::UnknownItem(item.clone()));
                    }
                }
                let set: BTreeSet<ItemId> = items.iter().cloned().collect();
                campaign.pending_reannotation.retain(|i| !set.contains(i));
                campaign.pending_review.retain(|i| !set.contains(i));
                campaign.holdout = Some(Holdout {
                    fraction: *fraction,
                    seed: *seed,
                    items: set,
                });
            }
        }
        self.last_sequence = seq;
        Ok(())
    }
}

/// Work units in the round with no live submission yet.
pub fn pending_units(campaign: &Campaign, round: &Round) -> Vec<WorkUnit> {
    let mut out = Vec::new();
    for (annotator, items) in &round.work {
        let author = Author::Annotator(annotator.clone());
        for (item, unit) in items {
            if unit.expired {
                continue;
            }
            let done = campaign
                .live_annotations(item)
                .iter()
                .any(|a| a.author == author && a.round_id == round.id)
                // a harmonised item needs no further work
                || campaign
                    .live_annotations(item)
                    .iter()
                    .any(|a| matches!(a.author, Author::Session(_)));
            if !done {
                out.push(WorkUnit {
                    item_id: item.clone(),
                    annotator_id: annotator.clone(),
                    kind: unit.kind,
                });
            }
        }
    }
    out
}

fn check_submission(
    campaign: &Campaign,
    round_id: RoundId,
    item_id: &ItemId,
    annotator_id: &AnnotatorId,
    content: &AnnotationContent,
    key: &str,
    review: bool,
) -> Result<(), StoreError> {
    if !campaign.annotators.contains_key(annotator_id) {
        return Err(StoreError::UnknownAnnotator(annotator_id.clone()));
    }
    if campaign.find_ack(annotator_id, key).is_some() {
        return Err(StoreError::InvalidConfig(format!("idempotency key '{key}' already used")));
    }
    let round = campaign.round(round_id)?;
    if !round.is_open() {
        return Err(StoreError::RoundClosed(round_id));
    }
    let missing = || StoreError::NoSuchAssignment {
        annotator: annotator_id.clone(),
        item: item_id.clone(),
        round: round_id,
    };
    let unit = round.unit(annotator_id, item_id).ok_or_else(missing)?;
    if unit.expired || (unit.kind == WorkKind::Review) != review {
        return Err(missing());
    }
    if campaign.is_holdout(item_id) {
        return Err(StoreError::HoldoutItem(item_id.clone()));
    }
    validate_content(content, campaign.schema()).map_err(StoreError::InvalidContent)
}

#[allow(clippy::too_many_arguments)]
fn record(
    campaign: &mut Campaign,
    seq: u64,
    at: Timestamp,
    round_id: RoundId,
    item_id: &ItemId,
    annotator_id: &AnnotatorId,
    content: &AnnotationContent,
    key: &str,
) {
    let id = AnnotationId(seq);
    let author = Author::Annotator(annotator_id.clone());
    let previous: Vec<AnnotationId> = campaign
        .live_annotations(item_id)
        .iter()
        .filter(|a| a.author == author && a.round_id == round_id)
        .map(|a| a.id)
        .collect();
    for old in previous {
        campaign.annotations.get_mut(&old).expect("indexed").superseded_by = Some(id);
    }
    campaign.annotations.insert(
        id,
        Annotation {
            id,
            item_id: item_id.clone(),
            author,
            round_id,
            content: content.clone(),
            submitted_at: at,
            superseded_by: None,
        },
    );
    campaign.by_item.entry(item_id.clone()).or_default().push(id);
    campaign.idempotency.entry(annotator_id.clone()).or_default().insert(
        key.to_owned(),
        Ack {
            sequence: seq,
            annotation_id: id,
            round_id,
            item_id: item_id.clone(),
        },
    );
}

fn close(campaign: &mut Campaign, round_id: RoundId, expired: &[WorkUnit], at: Timestamp) {
    let round = campaign.rounds.get_mut(&round_id).expect("checked");
    for unit in expired {
        if let Some(w) = round
            .work
            .get_mut(&unit.annotator_id)
            .and_then(|m| m.get_mut(&unit.item_id))
        {
            w.expired = true;
        }
    }

    let annotations = campaign.round_annotations(round_id);
    let mut summary = summarize_round(
        round_id,
        &annotations,
        campaign.schema(),
        campaign.config.reannotation_threshold(),
        at,
    );

    let escalated: BTreeSet<ItemId> = annotations
        .iter()
        .filter(|a| a.is_live() && campaign.reviews.get(&a.id) == Some(&ReviewAction::Escalate))
        .map(|a| a.item_id.clone())
        .collect();
    for item in escalated {
        if !summary.reannotation_queue.contains(&item) {
            summary.reannotation_queue.push(item);
        }
    }
    summary.reannotation_queue.retain(|i| !campaign.is_holdout(i));
    summary.reannotation_queue.sort();
    let queued: BTreeSet<&ItemId> = summary.reannotation_queue.iter().collect();
    summary
        .review_queue
        .retain(|i| !queued.contains(i) && !campaign.broadcast.contains(i) && !campaign.is_holdout(i));
    summary.labels = summary
        .labels
        .iter()
        .filter(|l| !queued.contains(&l.item_id))
        .filter_map(|l| campaign.final_label(&l.item_id))
        .collect();

    for item in &summary.reannotation_queue {
        if !campaign.pending_reannotation.contains(item) {
            campaign.pending_reannotation.push(item.clone());
        }
        campaign.deliberation.insert(item.clone(), round_id);
    }
    for item in &summary.review_queue {
        if !campaign.pending_review.contains(item) {
            campaign.pending_review.push(item.clone());
        }
    }
    let round = campaign.rounds.get_mut(&round_id).expect("checked");
    round.status = RoundStatus::Closed;
    round.closed_at = Some(at);
    round.summary = Some(summary);
}
