//! Event types for the append-only campaign log.

use serde::{Deserialize, Serialize};

use crate::domain::{AnnotationContent, AnnotatorId, CampaignId, Item, ItemId, RoundId, SessionRef, Timestamp};

use super::state::{AnnotatorRecord, CampaignConfig, ReviewAction, WorkUnit};

/// One immutable log entry. Sequence numbers start at 1 and are dense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub sequence: u64,
    pub recorded_at: Timestamp,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "kebab-case")]
pub enum EventKind {
    CampaignCreated {
        campaign_id: CampaignId,
        config: CampaignConfig,
        annotators: Vec<AnnotatorRecord>,
    },
    ItemsImported {
        campaign_id: CampaignId,
        items: Vec<Item>,
    },
    RoundOpened {
        campaign_id: CampaignId,
        round_id: RoundId,
        seed: u64,
        items: Vec<ItemId>,
        units: Vec<WorkUnit>,
    },
    /// Extra work issued into an open round, replacing expired units.
    AssignmentIssued {
        campaign_id: CampaignId,
        round_id: RoundId,
        units: Vec<WorkUnit>,
        #[serde(default)]
        expired: Vec<WorkUnit>,
    },
    AnnotationSubmitted {
        campaign_id: CampaignId,
        round_id: RoundId,
        item_id: ItemId,
        annotator_id: AnnotatorId,
        content: AnnotationContent,
        idempotency_key: String,
    },
    ReviewSubmitted {
        campaign_id: CampaignId,
        round_id: RoundId,
        item_id: ItemId,
        annotator_id: AnnotatorId,
        action: ReviewAction,
        content: AnnotationContent,
        idempotency_key: String,
    },
    ItemHarmonised {
        campaign_id: CampaignId,
        item_id: ItemId,
        session_ref: SessionRef,
        consensus: AnnotationContent,
    },
    RoundClosed {
        campaign_id: CampaignId,
        round_id: RoundId,
        #[serde(default)]
        expired: Vec<WorkUnit>,
    },
    HoldoutCarved {
        campaign_id: CampaignId,
        fraction: f64,
        seed: u64,
        items: Vec<ItemId>,
    },
}

impl EventKind {
    pub fn campaign_id(&self) -> &CampaignId {
        match self {
            EventKind::CampaignCreated { campaign_id, .. }
            | EventKind::ItemsImported { campaign_id, .. }
            | EventKind::RoundOpened { campaign_id, .. }
            | EventKind::AssignmentIssued { campaign_id, .. }
            | EventKind::AnnotationSubmitted { campaign_id, .. }
            | EventKind::ReviewSubmitted { campaign_id, .. }
            | EventKind::ItemHarmonised { campaign_id, .. }
            | EventKind::RoundClosed { campaign_id, .. }
            | EventKind::HoldoutCarved { campaign_id, .. } => campaign_id,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EventKind::CampaignCreated { .. } => "campaign-created",
            EventKind::ItemsImported { .. } => "items-imported",
            EventKind::RoundOpened { .. } => "round-opened",
            EventKind::AssignmentIssued { .. } => "assignment-issued",
            EventKind::AnnotationSubmitted { .. } => "annotation-submitted",
            EventKind::ReviewSubmitted { .. } => "review-submitted",
            EventKind::ItemHarmonised { .. } => "item-harmonised",
            EventKind::RoundClosed { .. } => "round-closed",
            EventKind::HoldoutCarved { .. } => "holdout-carved",
        }
    }
}
