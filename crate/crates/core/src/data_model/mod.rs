//! The opinionated event, trait and nudge schema shared by the device SDK,
//! the backend and the simulator.
//!
//! Every event that enters the system is validated against a
//! [`SchemaCatalog`] and the PII guard, then stored as one canonical text line
//! (see [`encode`]).

mod catalog;
pub mod encode;
mod event;
mod nudge;
pub mod pii;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use catalog::{CatalogError, EventSchema, SchemaCatalog, ValueType};
pub use encode::{canonical_decode, canonical_encode, canonical_line, DecodeError};
pub use event::{validate_event, EventRecord, RawEvent, ValidationError};
pub use nudge::{IllegalTransition, NudgeRecord, Reaction};
pub use pii::{scrub_check, PiiReason, PiiViolation};

/// Milliseconds in one UTC day.
pub const DAY_MS: i64 = 86_400_000;
/// Day 0 of the platform clock: 2024-01-01T00:00:00Z, a Monday.
pub const EPOCH_MS: i64 = 1_704_067_200_000;

/// First millisecond of platform day `day`.
pub fn day_start_ms(day: i64) -> i64 {
    EPOCH_MS + day * DAY_MS
}

/// Last millisecond of platform day `day`; trait windows ending here cover
/// the whole day.
pub fn day_end_ms(day: i64) -> i64 {
    day_start_ms(day + 1) - 1
}

pub fn day_of(timestamp_ms: i64) -> i64 {
    (timestamp_ms - EPOCH_MS).div_euclid(DAY_MS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Core,
    Ecommerce,
    Patient,
    Learning,
    Supply,
    Condition,
}

impl Stream {
    pub const ALL: [Stream; 6] = [
        Stream::Core,
        Stream::Ecommerce,
        Stream::Patient,
        Stream::Learning,
        Stream::Supply,
        Stream::Condition,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stream::Core => "core",
            Stream::Ecommerce => "ecommerce",
            Stream::Patient => "patient",
            Stream::Learning => "learning",
            Stream::Supply => "supply",
            Stream::Condition => "condition",
        }
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stream {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stream::ALL
            .into_iter()
            .find(|stream| stream.as_str() == s)
            .ok_or(())
    }
}

/// A typed payload scalar (or list of strings).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PayloadValue {
    Bool(bool),
    Num(f64),
    Str(String),
    List(Vec<String>),
}

impl PayloadValue {
    pub fn value_type(&self) -> ValueType {
        match self {
            PayloadValue::Bool(_) => ValueType::Bool,
            PayloadValue::Num(_) => ValueType::Num,
            PayloadValue::Str(_) => ValueType::Str,
            PayloadValue::List(_) => ValueType::List,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            PayloadValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            PayloadValue::Num(n) => Some(*n),
            _ => None,
        }
    }
}

impl From<&str> for PayloadValue {
    fn from(s: &str) -> Self {
        PayloadValue::Str(s.to_string())
    }
}

impl From<f64> for PayloadValue {
    fn from(n: f64) -> Self {
        PayloadValue::Num(n)
    }
}

impl From<bool> for PayloadValue {
    fn from(b: bool) -> Self {
        PayloadValue::Bool(b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenError {
    #[error("{what} must be {min}-{max} characters, got {len}")]
    Length {
        what: &'static str,
        min: usize,
        max: usize,
        len: usize,
    },
    #[error("{what} contains a character outside [A-Za-z0-9_-]")]
    Alphabet { what: &'static str },
    #[error("{what} looks like personal data")]
    Pii { what: &'static str },
}

fn is_token_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-'
}

/// Checks an opaque token (device, session, nudge, experiment ids).
pub fn validate_token(what: &'static str, value: &str) -> Result<(), TokenError> {
    check_token(what, value, 1, 64)
}

fn check_token(what: &'static str, value: &str, min: usize, max: usize) -> Result<(), TokenError> {
    let len = value.chars().count();
    if len < min || len > max {
        return Err(TokenError::Length { what, min, max, len });
    }
    if !value.chars().all(is_token_char) {
        return Err(TokenError::Alphabet { what });
    }
    Ok(())
}

/// Pseudonymous subject token: 8-64 characters from `[A-Za-z0-9_-]`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SubjectId(String);

impl SubjectId {
    pub fn new(value: impl Into<String>) -> Result<Self, TokenError> {
        let value = value.into();
        check_token("subject_id", &value, 8, 64)?;
        if pii::looks_like_phone(&value) {
            return Err(TokenError::Pii { what: "subject_id" });
        }
        Ok(SubjectId(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for SubjectId {
    type Error = TokenError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        SubjectId::new(value)
    }
}

impl From<SubjectId> for String {
    fn from(id: SubjectId) -> Self {
        id.0
    }
}

impl fmt::Display for SubjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraitKind {
    Static,
    Dynamic,
}

/// The value a trait takes for one subject. `Missing` when the subject has no
/// data the trait can be computed from (e.g. a static attribute never logged).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TraitScalar {
    Num(f64),
    Bool(bool),
    Str(String),
    Missing,
}

impl TraitScalar {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            TraitScalar::Num(n) => Some(*n),
            TraitScalar::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
            _ => None,
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, TraitScalar::Missing)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitValue {
    pub subject_id: SubjectId,
    pub name: String,
    pub kind: TraitKind,
    pub value: TraitScalar,
    pub as_of_ms: i64,
    pub window_days: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogItem {
    pub sku: String,
    pub name: String,
    pub category: String,
}
