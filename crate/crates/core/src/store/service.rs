//! Write path and queries over the campaign state.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agreement::{AgreementReport, ReportOptions};
use crate::dataset::{split_corpus, split_with_holdout, HoldoutMode, Split};
use crate::domain::{
    AggregateLabel, AnnotationContent, AnnotatorId, Author, CampaignId, Item, ItemId, RoundId, SessionRef,
};
use crate::orchestration::{assign_batch, carve_holdout, RoundSummary};

use super::clock::{Clock, SystemClock};
use super::event::{Event, EventKind};
use super::log::{replay, EventLog, FileLog, MemoryLog};
use super::state::{
    pending_units, Ack, AnnotatorRecord, Campaign, CampaignConfig, ContestedItem, QueueEntry, ReviewAction, State,
    WorkKind, WorkUnit,
};
use super::StoreError;

/// Hex SHA-256 of a bearer token; only hashes are stored.
pub fn hash_token(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

/// Per-round and cumulative agreement for a campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementOverview {
    pub rounds: Vec<AgreementReport>,
    pub cumulative: AgreementReport,
}

/// Single writer over an event log plus the state folded from it.
pub struct Store {
    log: Box<dyn EventLog>,
    state: State,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("last_sequence", &self.state.last_sequence)
            .finish()
    }
}

impl Store {
    pub fn in_memory(clock: Arc<dyn Clock>) -> Self {
        Self {
            log: Box::new(MemoryLog::new()),
            state: State::default(),
            clock,
        }
    }

    /// Opens a file-backed store, replaying whatever the directory holds.
    pub fn open(dir: impl AsRef<Path>, clock: Arc<dyn Clock>) -> Result<Self, StoreError> {
        let (log, state) = FileLog::open(dir)?;
        Ok(Self {
            log: Box::new(log),
            state,
            clock,
        })
    }

    pub fn open_default(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::open(dir, Arc::new(SystemClock))
    }

    pub fn with_log(log: Box<dyn EventLog>, clock: Arc<dyn Clock>) -> Result<Self, StoreError> {
        let state = replay(&log.read_all()?)?;
        Ok(Self { log, state, clock })
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn events(&self) -> Result<Vec<Event>, StoreError> {
        self.log.read_all()
    }

    pub fn campaign(&self, id: &CampaignId) -> Result<&Campaign, StoreError> {
        self.state.campaign(id)
    }

    /// Validates, persists, then acknowledges one event.
    pub fn append(&mut self, kind: EventKind) -> Result<u64, StoreError> {
        let event = Event {
            sequence: self.state.last_sequence + 1,
            recorded_at: self.clock.now(),
            kind,
        };
        let mut next = self.state.clone();
        next.apply(&event)?;
        self.log.append(&event)?;
        self.state = next;
        // snapshots are a cache; failing to write one loses nothing
        let _ = self.log.after_apply(&self.state);
        Ok(event.sequence)
    }

    pub fn create_campaign(
        &mut self,
        id: CampaignId,
        config: CampaignConfig,
        annotators: &[(AnnotatorId, String)],
    ) -> Result<u64, StoreError> {
        let annotators = annotators
            .iter()
            .map(|(id, token)| AnnotatorRecord {
                id: id.clone(),
                token_sha256: hash_token(token),
            })
            .collect();
        self.append(EventKind::CampaignCreated {
            campaign_id: id,
            config,
            annotators,
        })
    }

    pub fn import_items(&mut self, campaign: &CampaignId, items: Vec<Item>) -> Result<u64, StoreError> {
        self.append(EventKind::ItemsImported {
            campaign_id: campaign.clone(),
            items,
        })
    }

    /// Opens the next round.
    ///
    /// Queued re-annotation items come first, each to `k` annotators; review
    /// items go to every annotator who has not labelled them; then `size`
    /// fresh items (or the planned size for this round) from the pool.
    pub fn open_round(&mut self, campaign_id: &CampaignId, size: Option<usize>, seed: u64) -> Result<RoundId, StoreError> {
        let c = self.state.campaign(campaign_id)?;
        if let Some(open) = c.open_round() {
            return Err(StoreError::RoundStillOpen(open.id));
        }
        let round_id = c.last_round_id() + 1;
        let k = c.config.annotators_per_item();
        let annotators: Vec<AnnotatorId> = c.annotators.keys().cloned().collect();

        let mut items = Vec::new();
        let mut units = Vec::new();

        let reannotate: Vec<ItemId> = c
            .pending_reannotation
            .iter()
            .filter(|i| !c.is_holdout(i))
            .cloned()
            .collect();
        let assignment = assign_batch(round_id, &reannotate, &annotators, k, seed.wrapping_add(1))?;
        for item in &reannotate {
            for a in &assignment.items[item] {
                units.push(unit(item, a, WorkKind::Reannotation));
            }
            items.push(item.clone());
        }

        for item in c.pending_review.iter().filter(|i| !c.is_holdout(i)) {
            let seen = c.authors_of(item);
            let reviewers: Vec<&AnnotatorId> = annotators.iter().filter(|a| !seen.contains(a)).collect();
            if reviewers.is_empty() {
                continue;
            }
            for a in reviewers {
                units.push(unit(item, a, WorkKind::Review));
            }
            items.push(item.clone());
        }

        let wanted = match size.or_else(|| c.config.round_plan.as_ref().and_then(|p| p.size_of(round_id))) {
            Some(n) => n,
            None if items.is_empty() => return Err(StoreError::NoRoundSize(round_id)),
            None => 0,
        };
        let fresh: Vec<ItemId> = c.unused_items().take(wanted).cloned().collect();
        let assignment = assign_batch(round_id, &fresh, &annotators, k, seed)?;
        for item in &fresh {
            for a in &assignment.items[item] {
                units.push(unit(item, a, WorkKind::Fresh));
            }
            items.push(item.clone());
        }
        if items.is_empty() {
            return Err(StoreError::NothingToAssign);
        }

        self.append(EventKind::RoundOpened {
            campaign_id: campaign_id.clone(),
            round_id,
            seed,
            items,
            units,
        })?;
        Ok(round_id)
    }

    /// Records an annotation. A repeated idempotency key returns the
    /// original acknowledgement without writing anything.
    pub fn submit_annotation(
        &mut self,
        campaign_id: &CampaignId,
        annotator: &AnnotatorId,
        item: &ItemId,
        round_id: RoundId,
        content: AnnotationContent,
        idempotency_key: &str,
    ) -> Result<Ack, StoreError> {
        if let Some(ack) = self.prior_ack(campaign_id, annotator, idempotency_key)? {
            return Ok(ack);
        }
        self.append(EventKind::AnnotationSubmitted {
            campaign_id: campaign_id.clone(),
            round_id,
            item_id: item.clone(),
            annotator_id: annotator.clone(),
            content,
            idempotency_key: idempotency_key.to_owned(),
        })?;
        Ok(self.recorded_ack(campaign_id, annotator, idempotency_key))
    }

    /// Records a response to a broadcast review.
    #[allow(clippy::too_many_arguments)]
    pub fn submit_review(
        &mut self,
        campaign_id: &CampaignId,
        annotator: &AnnotatorId,
        item: &ItemId,
        round_id: RoundId,
        action: ReviewAction,
        content: AnnotationContent,
        idempotency_key: &str,
    ) -> Result<Ack, StoreError> {
        if let Some(ack) = self.prior_ack(campaign_id, annotator, idempotency_key)? {
            return Ok(ack);
        }
        self.append(EventKind::ReviewSubmitted {
            campaign_id: campaign_id.clone(),
            round_id,
            item_id: item.clone(),
            annotator_id: annotator.clone(),
            action,
            content,
            idempotency_key: idempotency_key.to_owned(),
        })?;
        Ok(self.recorded_ack(campaign_id, annotator, idempotency_key))
    }

    fn prior_ack(&self, campaign_id: &CampaignId, annotator: &AnnotatorId, key: &str) -> Result<Option<Ack>, StoreError> {
        let c = self.state.campaign(campaign_id)?;
        if !c.annotators.contains_key(annotator) {
            return Err(StoreError::UnknownAnnotator(annotator.clone()));
        }
        Ok(c.ack_for(annotator, key))
    }

    fn recorded_ack(&self, campaign_id: &CampaignId, annotator: &AnnotatorId, key: &str) -> Ack {
        self.state.campaigns[campaign_id]
            .ack_for(annotator, key)
            .expect("ack recorded by apply")
    }

    /// Replaces an item's live annotations with the deliberation consensus.
    pub fn harmonise(
        &mut self,
        campaign_id: &CampaignId,
        item: &ItemId,
        session_ref: SessionRef,
        consensus: AnnotationContent,
    ) -> Result<AggregateLabel, StoreError> {
        self.append(EventKind::ItemHarmonised {
            campaign_id: campaign_id.clone(),
            item_id: item.clone(),
            session_ref,
            consensus,
        })?;
        Ok(self.state.campaigns[campaign_id]
            .final_label(item)
            .expect("harmonised items are labelled"))
    }

    /// Closes a round. With `expire_pending`, unfinished assignments are
    /// expired instead of blocking the close.
    pub fn close_round(
        &mut self,
        campaign_id: &CampaignId,
        round_id: RoundId,
        expire_pending: bool,
    ) -> Result<RoundSummary, StoreError> {
        let c = self.state.campaign(campaign_id)?;
        let round = c.round(round_id)?;
        if let Some(summary) = &round.summary {
            return Err(StoreError::RoundAlreadyClosed {
                summary: Box::new(summary.clone()),
            });
        }
        let pending = pending_units(c, round);
        if !pending.is_empty() && !expire_pending {
            return Err(StoreError::PendingAssignments {
                round: round_id,
                count: pending.len(),
            });
        }
        self.append(EventKind::RoundClosed {
            campaign_id: campaign_id.clone(),
            round_id,
            expired: pending,
        })?;
        Ok(self.state.campaigns[campaign_id].rounds[&round_id]
            .summary
            .clone()
            .expect("closed round has a summary"))
    }

    /// Expires assignments in the open round issued at least `deadline_ms`
    /// ago and reissues each to the least-loaded annotator who has not seen
    /// the item. Returns the new units.
    pub fn reassign_expired(&mut self, campaign_id: &CampaignId, deadline_ms: i64) -> Result<Vec<WorkUnit>, StoreError> {
        let now = self.clock.now();
        let c = self.state.campaign(campaign_id)?;
        let Some(round) = c.open_round() else {
            return Ok(Vec::new());
        };
        let overdue: Vec<WorkUnit> = pending_units(c, round)
            .into_iter()
            .filter(|u| round.work[&u.annotator_id][&u.item_id].issued_at.millis() + deadline_ms <= now.millis())
            .collect();
        if overdue.is_empty() {
            return Ok(Vec::new());
        }
        let mut load: BTreeMap<&AnnotatorId, usize> = c.annotators.keys().map(|a| (a, round.load(a))).collect();
        let mut taken: BTreeSet<(ItemId, AnnotatorId)> = BTreeSet::new();
        let mut units = Vec::new();
        for old in &overdue {
            let seen = c.authors_of(&old.item_id);
            let candidate = load
                .iter()
                .filter(|(a, _)| {
                    !seen.contains(**a)
                        && round.work.get(**a).is_none_or(|m| !m.contains_key(&old.item_id))
                        && !taken.contains(&(old.item_id.clone(), (**a).clone()))
                })
                .min_by_key(|(a, n)| (**n, (**a).clone()))
                .map(|(a, _)| (*a).clone());
            if let Some(a) = candidate {
                *load.get_mut(&a).expect("known") += 1;
                taken.insert((old.item_id.clone(), a.clone()));
                units.push(unit(&old.item_id, &a, old.kind));
            }
        }
        let round_id = round.id;
        self.append(EventKind::AssignmentIssued {
            campaign_id: campaign_id.clone(),
            round_id,
            units: units.clone(),
            expired: overdue,
        })?;
        Ok(units)
    }

    /// Draws the gold holdout from the settled, labelled items.
    pub fn carve_holdout(&mut self, campaign_id: &CampaignId, fraction: f64, seed: u64) -> Result<BTreeSet<ItemId>, StoreError> {
        let c = self.state.campaign(campaign_id)?;
        if c.holdout.is_some() {
            return Err(StoreError::HoldoutExists);
        }
        let ids: Vec<ItemId> = c.labelled_corpus().into_iter().map(|i| i.id).collect();
        let chosen = carve_holdout(&ids, fraction, seed)?;
        self.append(EventKind::HoldoutCarved {
            campaign_id: campaign_id.clone(),
            fraction,
            seed,
            items: chosen.iter().cloned().collect(),
        })?;
        Ok(chosen)
    }

    /// Resolves a bearer token to the annotator it was issued to.
    pub fn authenticate(&self, token: &str) -> Result<(CampaignId, AnnotatorId), StoreError> {
        let digest = hash_token(token);
        self.state
            .campaigns
            .values()
            .find_map(|c| {
                c.annotators
                    .values()
                    .find(|a| a.token_sha256 == digest)
                    .map(|a| (c.id.clone(), a.id.clone()))
            })
            .ok_or(StoreError::Unauthorized)
    }

    pub fn next_queue(&self, campaign_id: &CampaignId, annotator: &AnnotatorId) -> Result<Vec<QueueEntry>, StoreError> {
        self.state.campaign(campaign_id)?.next_queue(annotator)
    }

    pub fn deliberation(&self, campaign_id: &CampaignId) -> Result<Vec<ContestedItem>, StoreError> {
        Ok(self.state.campaign(campaign_id)?.deliberation_queue())
    }

    pub fn labels(&self, campaign_id: &CampaignId) -> Result<Vec<AggregateLabel>, StoreError> {
        Ok(self.state.campaign(campaign_id)?.labels())
    }

    pub fn agreement(&self, campaign_id: &CampaignId, options: ReportOptions) -> Result<AgreementOverview, StoreError> {
        let c = self.state.campaign(campaign_id)?;
        let rounds = c
            .rounds
            .values()
            .filter_map(|r| r.summary.as_ref().map(|s| s.agreement.clone()))
            .collect();
        let computed_at = c
            .rounds
            .values()
            .filter_map(|r| r.closed_at)
            .max()
            .unwrap_or(c.created_at);
        Ok(AgreementOverview {
            rounds,
            cumulative: c.cumulative_agreement(computed_at, options),
        })
    }

    /// Train/test (and optionally holdout) splits of the settled corpus.
    pub fn splits(
        &self,
        campaign_id: &CampaignId,
        mode: HoldoutMode,
        test_fraction: f64,
        seed: u64,
        stratified: bool,
    ) -> Result<Vec<Split>, StoreError> {
        let c = self.state.campaign(campaign_id)?;
        let corpus = c.labelled_corpus();
        Ok(match &c.holdout {
            Some(h) => split_with_holdout(&corpus, &h.items, mode, test_fraction, seed, stratified)?,
            None => {
                let (train, test) = split_corpus(&corpus, test_fraction, seed, stratified)?;
                vec![train, test]
            }
        })
    }

    /// True once every live annotation of the item is a session record.
    pub fn is_harmonised(&self, campaign_id: &CampaignId, item: &ItemId) -> Result<bool, StoreError> {
        let c = self.state.campaign(campaign_id)?;
        Ok(c.live_annotations(item)
            .iter()
            .any(|a| matches!(a.author, Author::Session(_))))
    }
}

fn unit(item: &ItemId, annotator: &AnnotatorId, kind: WorkKind) -> WorkUnit {
    WorkUnit {
        item_id: item.clone(),
        annotator_id: annotator.clone(),
        kind,
    }
}
