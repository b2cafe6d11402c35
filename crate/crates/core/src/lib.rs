//! Core library for running multi-round annotation campaigns: agreement
//! coefficients, label aggregation, round orchestration, dataset splits,
//! model evaluation, and the event-sourced campaign store.

pub mod aggregation;
pub mod agreement;
pub mod dataset;
pub mod domain;
pub mod evaluation;
pub mod orchestration;
pub mod store;

pub use aggregation::{aggregate_classification, aggregate_flags, aggregate_item, needs_review};
pub use agreement::{agreement_report, gwet_ac1, item_disagreement, krippendorff_alpha, DistanceMetric, ReliabilityTable};
pub use domain::*;
pub use orchestration::{assign_batch, carve_holdout, plan_rounds, sample_pool, RoundPlan, RoundSummary};
