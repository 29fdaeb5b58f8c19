use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::pii::is_denylisted_key;
use super::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    Str,
    Num,
    Bool,
    List,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSchema {
    pub required: BTreeMap<String, ValueType>,
    pub optional: BTreeMap<String, ValueType>,
}

impl EventSchema {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn require(mut self, key: &str, ty: ValueType) -> Self {
        self.required.insert(key.to_string(), ty);
        self
    }

    pub fn optional(mut self, key: &str, ty: ValueType) -> Self {
        self.optional.insert(key.to_string(), ty);
        self
    }

    pub fn key_type(&self, key: &str) -> Option<ValueType> {
        self.required
            .get(key)
            .or_else(|| self.optional.get(key))
            .copied()
    }

    fn keys(&self) -> impl Iterator<Item = &String> {
        self.required.keys().chain(self.optional.keys())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CatalogError {
    #[error("event {0}/{1} is already registered")]
    Duplicate(Stream, String),
    #[error("key `{0}` is on the PII denylist")]
    DenylistedKey(String),
    #[error("key `{0}` is declared both required and optional")]
    Ambiguous(String),
    #[error("invalid name `{0}`: use [a-z0-9_]")]
    BadName(String),
}

pub(crate) fn is_schema_name(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 64
        && s.chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// Registry of the events each stream may carry and their payload keys.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SchemaCatalog {
    entries: BTreeMap<(Stream, String), EventSchema>,
}

impl SchemaCatalog {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The catalog every component ships with.
    pub fn starter() -> Self {
        use ValueType::*;
        let mut c = Self::empty();
        let entries = [
            (
                Stream::Ecommerce,
                "order_placed",
                EventSchema::new()
                    .require("sku", Str)
                    .require("qty", Num)
                    .optional("basket_id", Str)
                    .optional("price", Num),
            ),
            (
                Stream::Ecommerce,
                "item_viewed",
                EventSchema::new().require("sku", Str).optional("source", Str),
            ),
            (
                Stream::Ecommerce,
                "cart_add",
                EventSchema::new().require("sku", Str).require("qty", Num),
            ),
            (
                Stream::Patient,
                "visit_recorded",
                EventSchema::new()
                    .require("visit_type", Str)
                    .optional("facility", Str)
                    .optional("referred", Bool),
            ),
            (
                Stream::Patient,
                "referral_made",
                EventSchema::new()
                    .require("referral_type", Str)
                    .optional("facility", Str),
            ),
            (
                Stream::Learning,
                "module_started",
                EventSchema::new().require("module_id", Str),
            ),
            (
                Stream::Learning,
                "module_completed",
                EventSchema::new()
                    .require("module_id", Str)
                    .optional("score", Num),
            ),
            (
                Stream::Core,
                "app_open",
                EventSchema::new()
                    .optional("screen", Str)
                    .optional("facility", Str)
                    .optional("region", Str),
            ),
            (
                Stream::Core,
                "nudge_reaction",
                EventSchema::new()
                    .require("nudge_id", Str)
                    .require("kind", Str)
                    .optional("experiment_id", Str),
            ),
        ];
        for (stream, name, schema) in entries {
            c.register(stream, name, schema)
                .expect("starter catalog is well-formed");
        }
        c
    }

    pub fn register(
        &mut self,
        stream: Stream,
        event_name: &str,
        schema: EventSchema,
    ) -> Result<(), CatalogError> {
        if !is_schema_name(event_name) {
            return Err(CatalogError::BadName(event_name.to_string()));
        }
        for key in schema.keys() {
            if is_denylisted_key(key) {
                return Err(CatalogError::DenylistedKey(key.clone()));
            }
            if !is_schema_name(key) {
                return Err(CatalogError::BadName(key.clone()));
            }
        }
        if let Some(key) = schema
            .required
            .keys()
            .find(|k| schema.optional.contains_key(*k))
        {
            return Err(CatalogError::Ambiguous(key.clone()));
        }
        let slot = (stream, event_name.to_string());
        if self.entries.contains_key(&slot) {
            return Err(CatalogError::Duplicate(stream, event_name.to_string()));
        }
        self.entries.insert(slot, schema);
        Ok(())
    }

    pub fn get(&self, stream: Stream, event_name: &str) -> Option<&EventSchema> {
        self.entries.get(&(stream, event_name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Stream, &str, &EventSchema)> {
        self.entries
            .iter()
            .map(|((stream, name), schema)| (*stream, name.as_str(), schema))
    }
}
