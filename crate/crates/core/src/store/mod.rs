//! Event-sourced campaign store.
//!
//! Every write becomes an [`Event`] that is validated against the current
//! state, made durable, and only then acknowledged. State is a pure fold
//! over the log, so replaying the log rebuilds it exactly.

mod clock;
mod event;
mod log;
mod service;
mod state;

use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::domain::{AnnotationError, AnnotatorId, CampaignId, ItemId, RoundId, SchemaError};
use crate::orchestration::{OrchestrationError, RoundSummary};

pub use clock::{Clock, ManualClock, SystemClock};
pub use event::{Event, EventKind};
pub use log::{replay, replay_from, EventLog, FileLog, MemoryLog, DEFAULT_SNAPSHOT_EVERY};
pub use service::{hash_token, AgreementOverview, Store};
pub use state::{
    pending_units, Ack, AnnotatorRecord, Campaign, CampaignConfig, ContestedItem, ContestedLabel, Holdout, IssuedWork,
    QueueEntry, ReviewAction, Round, RoundStatus, State, WorkKind, WorkUnit,
};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown campaign '{0}'")]
    UnknownCampaign(CampaignId),
    #[error("campaign '{0}' already exists")]
    CampaignExists(CampaignId),
    #[error("unknown item '{0}'")]
    UnknownItem(ItemId),
    #[error("unknown annotator '{0}'")]
    UnknownAnnotator(AnnotatorId),
    #[error("unknown round {0}")]
    UnknownRound(RoundId),
    #[error("duplicate item '{0}'")]
    DuplicateItem(ItemId),
    #[error("item '{0}' has empty text")]
    EmptyText(ItemId),
    #[error("invalid schema: {}", join(.0))]
    InvalidSchema(Vec<SchemaError>),
    #[error("invalid annotation: {}", join(.0))]
    InvalidContent(Vec<AnnotationError>),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no open assignment of '{item}' to '{annotator}' in round {round}")]
    NoSuchAssignment {
        annotator: AnnotatorId,
        item: ItemId,
        round: RoundId,
    },
    #[error("round {0} is closed")]
    RoundClosed(RoundId),
    #[error("round {0} is still open")]
    RoundStillOpen(RoundId),
    #[error("round {} is already closed", .summary.round_id)]
    RoundAlreadyClosed { summary: Box<RoundSummary> },
    #[error("round {round} has {count} pending assignments")]
    PendingAssignments { round: RoundId, count: usize },
    #[error("no items available for a new round")]
    NothingToAssign,
    #[error("round size not given and no round plan configured for round {0}")]
    NoRoundSize(RoundId),
    #[error("item '{0}' is not awaiting deliberation")]
    NotInDeliberation(ItemId),
    #[error("item '{0}' has no annotations")]
    NoAnnotations(ItemId),
    #[error("item '{0}' is in the holdout")]
    HoldoutItem(ItemId),
    #[error("holdout already carved")]
    HoldoutExists,
    #[error("invalid or unknown token")]
    Unauthorized,
    #[error(transparent)]
    Orchestration(#[from] OrchestrationError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("event log corrupt: expected sequence {expected}, found {found}")]
    SequenceGap { expected: u64, found: u64 },
    #[error("event log corrupt at line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn join<T: std::fmt::Display>(errors: &[T]) -> String {
    errors.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl StoreError {
    /// Stable machine-readable code for API error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::UnknownCampaign(_)
            | StoreError::UnknownItem(_)
            | StoreError::UnknownAnnotator(_)
            | StoreError::UnknownRound(_) => "not-found",
            StoreError::CampaignExists(_) | StoreError::DuplicateItem(_) => "conflict",
            StoreError::EmptyText(_)
            | StoreError::InvalidSchema(_)
            | StoreError::InvalidContent(_)
            | StoreError::InvalidConfig(_)
            | StoreError::Orchestration(_)
            | StoreError::Dataset(_) => "validation",
            StoreError::NoSuchAssignment { .. } => "no-such-assignment",
            StoreError::RoundClosed(_) => "round-closed",
            StoreError::RoundStillOpen(_) => "round-open",
            StoreError::RoundAlreadyClosed { .. } => "round-already-closed",
            StoreError::PendingAssignments { .. } => "pending-assignments",
            StoreError::NothingToAssign | StoreError::NoRoundSize(_) => "nothing-to-assign",
            StoreError::NotInDeliberation(_) | StoreError::NoAnnotations(_) => "not-in-deliberation",
            StoreError::HoldoutItem(_) => "holdout-item",
            StoreError::HoldoutExists => "holdout-exists",
            StoreError::Unauthorized => "unauthorized",
            StoreError::SequenceGap { .. } | StoreError::Corrupt { .. } => "corrupt-log",
            StoreError::Io { .. } => "storage",
        }
    }
}
