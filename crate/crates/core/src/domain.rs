//! Campaign vocabulary: labelling schema, items, annotations and labels.
//!
//! Everything here is a plain value type. Validation functions return the
//! complete list of violations rather than stopping at the first one, so an
//! operator editing a schema file sees every problem at once.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(
    /// Opaque item identifier, unique within a campaign.
    ItemId
);
string_id!(AnnotatorId);
string_id!(CampaignId);
string_id!(
    /// Identity of a deliberation session; harmonised records are attributed to it.
    SessionRef
);

/// Round numbers start at 1.
pub type RoundId = u32;

/// Reference to a stored annotation. Assigned by the event store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnnotationId(pub u64);

impl fmt::Display for AnnotationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

/// UTC instant truncated to millisecond precision.
///
/// Serialized as RFC 3339 with exactly three fractional digits, so a value
/// survives a text round trip unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(DateTime<Utc>);

impl Timestamp {
    pub fn from_datetime(dt: DateTime<Utc>) -> Self {
        Self::from_millis(dt.timestamp_millis())
    }

    pub fn from_millis(ms: i64) -> Self {
        Self(
            Utc.timestamp_millis_opt(ms)
                .single()
                .expect("millisecond timestamp in chrono range"),
        )
    }

    pub fn now() -> Self {
        Self::from_datetime(Utc::now())
    }

    pub fn millis(&self) -> i64 {
        self.0.timestamp_millis()
    }

    pub fn as_datetime(&self) -> DateTime<Utc> {
        self.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.to_rfc3339_opts(SecondsFormat::Millis, true))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        let dt = DateTime::parse_from_rfc3339(&raw).map_err(serde::de::Error::custom)?;
        Ok(Self::from_datetime(dt.with_timezone(&Utc)))
    }
}

/// One step of the ordered classification scale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassLevel {
    pub value: u32,
    pub name: String,
}

impl ClassLevel {
    pub fn new(value: u32, name: impl Into<String>) -> Self {
        Self {
            value,
            name: name.into(),
        }
    }
}

/// Which items are broadcast to the remaining annotators for confirmation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReviewPolicy {
    /// Any single annotator judging the item positive routes it.
    #[default]
    AnyPositive,
    /// Only items whose aggregate class is positive are routed.
    AggregatePositive,
}

/// Classification scale, feature flags and routing policy for a campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabellingSchema {
    pub classification_scale: Vec<ClassLevel>,
    #[serde(default)]
    pub flags: Vec<String>,
    #[serde(default = "default_min_annotators")]
    pub min_annotators_per_item: usize,
    #[serde(default)]
    pub review_policy: ReviewPolicy,
    #[serde(default = "default_threshold")]
    pub high_disagreement_threshold: f64,
}

fn default_min_annotators() -> usize {
    3
}

fn default_threshold() -> f64 {
    0.5
}

/// Flags used by the polarization campaign: the five ways out-group hostility
/// shows up in text.
pub const POLARIZATION_FLAGS: [&str; 5] = [
    "stereotyping",
    "dehumanisation",
    "deindividuation",
    "vilification",
    "calls_to_violence",
];

impl Default for LabellingSchema {
    fn default() -> Self {
        Self {
            classification_scale: vec![
                ClassLevel::new(0, "Not"),
                ClassLevel::new(1, "Potentially"),
                ClassLevel::new(2, "Definitely"),
            ],
            flags: POLARIZATION_FLAGS.iter().map(|f| f.to_string()).collect(),
            min_annotators_per_item: default_min_annotators(),
            review_policy: ReviewPolicy::default(),
            high_disagreement_threshold: default_threshold(),
        }
    }
}

impl LabellingSchema {
    /// Default three-class scale with no flags.
    pub fn without_flags() -> Self {
        Self {
            flags: Vec::new(),
            ..Self::default()
        }
    }

    pub fn class_count(&self) -> u32 {
        self.classification_scale.len() as u32
    }

    pub fn contains_class(&self, value: u32) -> bool {
        value < self.class_count()
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }

    pub fn class_name(&self, value: u32) -> Option<&str> {
        self.classification_scale
            .iter()
            .find(|c| c.value == value)
            .map(|c| c.name.as_str())
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchemaError {
    #[error("fewer than 2 classes")]
    TooFewClasses,
    #[error("class values must be consecutive integers starting at 0 (position {position} has value {value})")]
    NonConsecutiveClass { position: usize, value: u32 },
    #[error("duplicate flag \"{0}\"")]
    DuplicateFlag(String),
    #[error("empty flag name")]
    EmptyFlag,
    #[error("min_annotators_per_item must be at least 1")]
    NoAnnotatorsRequired,
    #[error("high_disagreement_threshold {0} outside [0, 1]")]
    ThresholdOutOfRange(f64),
}

/// Checks every schema invariant and reports all violations.
pub fn validate_schema(schema: &LabellingSchema) -> Result<(), Vec<SchemaError>> {
    let mut errors = Vec::new();
    if schema.classification_scale.len() < 2 {
        errors.push(SchemaError::TooFewClasses);
    }
    for (position, level) in schema.classification_scale.iter().enumerate() {
        if level.value as usize != position {
            errors.push(SchemaError::NonConsecutiveClass {
                position,
                value: level.value,
            });
        }
    }
    let mut seen = BTreeSet::new();
    for flag in &schema.flags {
        if flag.trim().is_empty() {
            errors.push(SchemaError::EmptyFlag);
        } else if !seen.insert(flag.as_str()) {
            errors.push(SchemaError::DuplicateFlag(flag.clone()));
        }
    }
    if schema.min_annotators_per_item < 1 {
        errors.push(SchemaError::NoAnnotatorsRequired);
    }
    let t = schema.high_disagreement_threshold;
    if !(0.0..=1.0).contains(&t) {
        errors.push(SchemaError::ThresholdOutOfRange(t));
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

/// A unit of text to be labelled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: ItemId,
    pub text: String,
    #[serde(default, rename = "meta")]
    pub source_meta: BTreeMap<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_id: Option<String>,
}

impl Item {
    pub fn new(id: impl Into<ItemId>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            source_meta: BTreeMap::new(),
            pool_id: None,
        }
    }
}

/// The judgement part of an annotation, without attribution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationContent {
    pub class_value: u32,
    #[serde(default)]
    pub flags: BTreeSet<String>,
    #[serde(default)]
    pub mark_for_review: bool,
}

impl AnnotationContent {
    pub fn class(class_value: u32) -> Self {
        Self {
            class_value,
            flags: BTreeSet::new(),
            mark_for_review: false,
        }
    }

    pub fn with_flag(mut self, flag: impl Into<String>) -> Self {
        self.flags.insert(flag.into());
        self
    }

    pub fn marked(mut self) -> Self {
        self.mark_for_review = true;
        self
    }
}

/// Who produced an annotation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "kebab-case")]
pub enum Author {
    Annotator(AnnotatorId),
    Session(SessionRef),
}

/// One annotator's judgement on one item in one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: AnnotationId,
    pub item_id: ItemId,
    pub author: Author,
    pub round_id: RoundId,
    #[serde(flatten)]
    pub content: AnnotationContent,
    pub submitted_at: Timestamp,
    #[serde(default)]
    pub superseded_by: Option<AnnotationId>,
}

impl Annotation {
    pub fn is_live(&self) -> bool {
        self.superseded_by.is_none()
    }

    pub fn class_value(&self) -> u32 {
        self.content.class_value
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.content.flags.contains(flag)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnnotationError {
    #[error("class {0} out of scale")]
    ClassOutOfScale(u32),
    #[error("undeclared flag \"{0}\"")]
    UndeclaredFlag(String),
}

pub fn validate_content(
    content: &AnnotationContent,
    schema: &LabellingSchema,
) -> Result<(), Vec<AnnotationError>> {
    let mut errors = Vec::new();
    if !schema.contains_class(content.class_value) {
        errors.push(AnnotationError::ClassOutOfScale(content.class_value));
    }
    for flag in &content.flags {
        if !schema.has_flag(flag) {
            errors.push(AnnotationError::UndeclaredFlag(flag.clone()));
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

pub fn validate_annotation(
    annotation: &Annotation,
    schema: &LabellingSchema,
) -> Result<(), Vec<AnnotationError>> {
    validate_content(&annotation.content, schema)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinaryLabel {
    Negative,
    Positive,
}

impl BinaryLabel {
    pub fn is_positive(self) -> bool {
        self == BinaryLabel::Positive
    }

    pub fn as_u8(self) -> u8 {
        match self {
            BinaryLabel::Negative => 0,
            BinaryLabel::Positive => 1,
        }
    }

    pub fn from_u8(value: u8) -> Option<Self> {
        match value {
            0 => Some(BinaryLabel::Negative),
            1 => Some(BinaryLabel::Positive),
            _ => None,
        }
    }

    pub fn complement(self) -> Self {
        match self {
            BinaryLabel::Negative => BinaryLabel::Positive,
            BinaryLabel::Positive => BinaryLabel::Negative,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("invalid class {value}: scale has {class_count} classes")]
pub struct InvalidClass {
    pub value: u32,
    pub class_count: u32,
}

/// Class 0 is the only negative class, whatever the scale size.
pub fn collapse_binary(class_value: u32, schema: &LabellingSchema) -> Result<BinaryLabel, InvalidClass> {
    if !schema.contains_class(class_value) {
        return Err(InvalidClass {
            value: class_value,
            class_count: schema.class_count(),
        });
    }
    Ok(if class_value == 0 {
        BinaryLabel::Negative
    } else {
        BinaryLabel::Positive
    })
}

/// How an item's final class was decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationMethod {
    Plurality,
    TieLower,
    Harmonised,
    ReviewConfirmed,
}

impl AggregationMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            AggregationMethod::Plurality => "plurality",
            AggregationMethod::TieLower => "tie-lower",
            AggregationMethod::Harmonised => "harmonised",
            AggregationMethod::ReviewConfirmed => "review-confirmed",
        }
    }
}

impl fmt::Display for AggregationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Final per-item label with provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateLabel {
    pub item_id: ItemId,
    pub final_class: u32,
    pub method: AggregationMethod,
    pub flag_consensus: BTreeSet<String>,
    pub contributing_annotations: Vec<AnnotationId>,
}
