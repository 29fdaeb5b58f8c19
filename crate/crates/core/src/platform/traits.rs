//! Built-in contextual traits computed from the event log.
//!
//! Dynamic windows are half-open: `(as_of - window_days, as_of]`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_model::{
    PayloadValue, Stream, SubjectId, TraitKind, TraitScalar, TraitValue, DAY_MS,
};

use super::log::EventLog;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraitDefinition {
    /// Distinct `sku` values among `ecommerce/order_placed` in the last 7 days.
    WeeklyPurchasedVariety,
    DaysSinceLastEvent { event_name: String },
    CountEvents { event_name: String },
    DistinctPayloadValues { key: String },
    StaticAttribute { key: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraitDescriptor {
    pub name: String,
    pub kind: TraitKind,
    pub window_days: u32,
    pub definition: TraitDefinition,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraitError {
    #[error("unknown trait `{0}`")]
    UnknownTrait(String),
    #[error("trait `{name}`: {reason}")]
    InvalidDescriptor { name: String, reason: &'static str },
}

impl TraitDescriptor {
    pub fn dynamic(name: &str, window_days: u32, definition: TraitDefinition) -> Self {
        TraitDescriptor {
            name: name.to_string(),
            kind: TraitKind::Dynamic,
            window_days,
            definition,
        }
    }

    pub fn static_attribute(name: &str, key: &str) -> Self {
        TraitDescriptor {
            name: name.to_string(),
            kind: TraitKind::Static,
            window_days: 0,
            definition: TraitDefinition::StaticAttribute {
                key: key.to_string(),
            },
        }
    }

    pub fn weekly_purchased_variety() -> Self {
        Self::dynamic("weekly_purchased_variety", 7, TraitDefinition::WeeklyPurchasedVariety)
    }

    pub fn validate(&self) -> Result<(), TraitError> {
        let invalid = |reason| TraitError::InvalidDescriptor {
            name: self.name.clone(),
            reason,
        };
        if self.name.is_empty() {
            return Err(invalid("empty name"));
        }
        match (&self.definition, self.kind) {
            (TraitDefinition::StaticAttribute { .. }, TraitKind::Static) => {
                if self.window_days != 0 {
                    return Err(invalid("static traits have window_days = 0"));
                }
            }
            (TraitDefinition::StaticAttribute { .. }, TraitKind::Dynamic) => {
                return Err(invalid("static_attribute must be a static trait"))
            }
            (_, TraitKind::Static) => return Err(invalid("windowed built-ins are dynamic")),
            (def, TraitKind::Dynamic) => {
                if self.window_days < 1 {
                    return Err(invalid("dynamic traits need window_days >= 1"));
                }
                if *def == TraitDefinition::WeeklyPurchasedVariety && self.window_days != 7 {
                    return Err(invalid("weekly_purchased_variety has a 7-day window"));
                }
            }
        }
        Ok(())
    }

    /// Whether the value is always numeric (needed for mean/sum metrics).
    pub fn is_numeric(&self) -> bool {
        !matches!(self.definition, TraitDefinition::StaticAttribute { .. })
    }
}

fn payload_to_trait(v: &PayloadValue) -> TraitScalar {
    match v {
        PayloadValue::Num(n) => TraitScalar::Num(*n),
        PayloadValue::Bool(b) => TraitScalar::Bool(*b),
        PayloadValue::Str(s) => TraitScalar::Str(s.clone()),
        PayloadValue::List(items) => TraitScalar::Str(items.join(",")),
    }
}

/// Computes one trait for one subject. A pure function of the log entries
/// with `timestamp <= as_of_ms` and the descriptor.
pub fn compute_trait(
    log: &EventLog,
    subject: &SubjectId,
    desc: &TraitDescriptor,
    as_of_ms: i64,
) -> Result<TraitValue, TraitError> {
    desc.validate()?;
    let from = as_of_ms - i64::from(desc.window_days) * DAY_MS;
    let window = || log.subject_events_between(subject, from, as_of_ms);
    let value = match &desc.definition {
        TraitDefinition::WeeklyPurchasedVariety => {
            let skus: BTreeSet<&str> = window()
                .filter(|e| e.stream == Stream::Ecommerce && e.event_name == "order_placed")
                .filter_map(|e| e.payload_str("sku"))
                .collect();
            TraitScalar::Num(skus.len() as f64)
        }
        TraitDefinition::CountEvents { event_name } => {
            TraitScalar::Num(window().filter(|e| &e.event_name == event_name).count() as f64)
        }
        TraitDefinition::DistinctPayloadValues { key } => {
            let values: BTreeSet<String> = window()
                .filter_map(|e| e.payload.get(key))
                .map(|v| match v {
                    PayloadValue::Str(s) => s.clone(),
                    other => serde_json::to_string(other).unwrap_or_default(),
                })
                .collect();
            TraitScalar::Num(values.len() as f64)
        }
        TraitDefinition::DaysSinceLastEvent { event_name } => window()
            .filter(|e| &e.event_name == event_name)
            .last()
            .map_or(TraitScalar::Missing, |e| {
                TraitScalar::Num(((as_of_ms - e.timestamp_ms) / DAY_MS) as f64)
            }),
        TraitDefinition::StaticAttribute { key } => log
            .subject_events_between(subject, i64::MIN, as_of_ms)
            .filter_map(|e| e.payload.get(key))
            .last()
            .map_or(TraitScalar::Missing, payload_to_trait),
    };
    Ok(TraitValue {
        subject_id: subject.clone(),
        name: desc.name.clone(),
        kind: desc.kind,
        value,
        as_of_ms,
        window_days: desc.window_days,
    })
}

/// Named trait descriptors a deployment exposes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraitRegistry {
    traits: BTreeMap<String, TraitDescriptor>,
}

impl Default for TraitRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl TraitRegistry {
    pub fn empty() -> Self {
        TraitRegistry {
            traits: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        let builtins = [
            TraitDescriptor::weekly_purchased_variety(),
            TraitDescriptor::dynamic(
                "orders_last_28d",
                28,
                TraitDefinition::CountEvents {
                    event_name: "order_placed".into(),
                },
            ),
            TraitDescriptor::dynamic(
                "days_since_last_order",
                56,
                TraitDefinition::DaysSinceLastEvent {
                    event_name: "order_placed".into(),
                },
            ),
            TraitDescriptor::dynamic(
                "app_opens_last_7d",
                7,
                TraitDefinition::CountEvents {
                    event_name: "app_open".into(),
                },
            ),
            TraitDescriptor::dynamic(
                "skus_viewed_last_7d",
                7,
                TraitDefinition::DistinctPayloadValues { key: "sku".into() },
            ),
            TraitDescriptor::static_attribute("facility", "facility"),
            TraitDescriptor::static_attribute("region", "region"),
        ];
        for d in builtins {
            r.register(d).expect("builtin traits are valid");
        }
        r
    }

    pub fn register(&mut self, desc: TraitDescriptor) -> Result<(), TraitError> {
        desc.validate()?;
        self.traits.insert(desc.name.clone(), desc);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&TraitDescriptor, TraitError> {
        self.traits
            .get(name)
            .ok_or_else(|| TraitError::UnknownTrait(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &TraitDescriptor> {
        self.traits.values()
    }

    pub fn compute(
        &self,
        log: &EventLog,
        subject: &SubjectId,
        name: &str,
        as_of_ms: i64,
    ) -> Result<TraitValue, TraitError> {
        compute_trait(log, subject, self.get(name)?, as_of_ms)
    }

    pub fn compute_all(&self, log: &EventLog, subject: &SubjectId, as_of_ms: i64) -> Vec<TraitValue> {
        self.traits
            .values()
            .map(|d| compute_trait(log, subject, d, as_of_ms).expect("registered traits are valid"))
            .collect()
    }
}
