use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::catalog::{is_schema_name, SchemaCatalog, ValueType};
use super::pii::{scrub_check, PiiViolation};
use super::{validate_token, PayloadValue, Stream, SubjectId, TokenError};

/// One validated, pseudonymous, timestamped subject action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub subject_id: SubjectId,
    pub device_id: String,
    pub stream: Stream,
    pub event_name: String,
    pub timestamp_ms: i64,
    pub sequence_no: u64,
    pub session_id: String,
    pub payload: BTreeMap<String, PayloadValue>,
}

impl EventRecord {
    pub fn payload_str(&self, key: &str) -> Option<&str> {
        self.payload.get(key).and_then(PayloadValue::as_str)
    }
}

/// An untrusted event as received from a client, before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEvent {
    pub stream: String,
    pub event_name: String,
    pub subject_id: String,
    pub device_id: String,
    pub session_id: String,
    pub sequence_no: u64,
    pub timestamp_ms: i64,
    #[serde(default)]
    pub payload: serde_json::Map<String, Value>,
}

impl From<&EventRecord> for RawEvent {
    fn from(e: &EventRecord) -> Self {
        RawEvent {
            stream: e.stream.as_str().to_string(),
            event_name: e.event_name.clone(),
            subject_id: e.subject_id.as_str().to_string(),
            device_id: e.device_id.clone(),
            session_id: e.session_id.clone(),
            sequence_no: e.sequence_no,
            timestamp_ms: e.timestamp_ms,
            payload: e
                .payload
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::to_value(v).expect("payload serializes")))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ValidationError {
    #[error("unknown event {stream}/{event_name}")]
    UnknownEvent { stream: String, event_name: String },
    #[error("missing required payload key `{0}`")]
    MissingKey(String),
    #[error("payload key `{0}` is not declared for this event")]
    UnknownKey(String),
    #[error("payload key `{key}` should be {expected:?}")]
    TypeMismatch { key: String, expected: ValueType },
    #[error("payload carries personal data: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", "))]
    PiiViolation(Vec<PiiViolation>),
    #[error(transparent)]
    Token(#[from] TokenError),
    #[error("{field}: {reason}")]
    Field {
        field: &'static str,
        reason: &'static str,
    },
}

/// Natural typing of a JSON value, before comparing with the schema.
fn json_to_payload(value: &Value) -> Option<PayloadValue> {
    match value {
        Value::Bool(b) => Some(PayloadValue::Bool(*b)),
        Value::Number(n) => n.as_f64().filter(|f| f.is_finite()).map(|f| {
            // -0 and 0 must encode identically
            PayloadValue::Num(if f == 0.0 { 0.0 } else { f })
        }),
        Value::String(s) => Some(PayloadValue::Str(s.clone())),
        Value::Array(items) => items
            .iter()
            .map(|v| v.as_str().filter(|s| !s.is_empty()).map(str::to_string))
            .collect::<Option<Vec<_>>>()
            .map(PayloadValue::List),
        Value::Null | Value::Object(_) => None,
    }
}

/// Validates a raw event against the catalog and the PII guard.
///
/// The returned record's payload holds exactly the declared keys that were
/// sent; unknown keys, missing required keys and wrongly typed values are
/// rejected.
pub fn validate_event(raw: &RawEvent, catalog: &SchemaCatalog) -> Result<EventRecord, ValidationError> {
    let unknown = || ValidationError::UnknownEvent {
        stream: raw.stream.clone(),
        event_name: raw.event_name.clone(),
    };
    let stream: Stream = raw.stream.parse().map_err(|_| unknown())?;
    let schema = catalog.get(stream, &raw.event_name).ok_or_else(unknown)?;

    let subject_id = SubjectId::new(raw.subject_id.clone())?;
    validate_token("device_id", &raw.device_id)?;
    validate_token("session_id", &raw.session_id)?;
    if raw.sequence_no < 1 {
        return Err(ValidationError::Field {
            field: "sequence_no",
            reason: "must be >= 1",
        });
    }
    if raw.timestamp_ms <= 0 {
        return Err(ValidationError::Field {
            field: "timestamp_ms",
            reason: "must be > 0",
        });
    }

    let mut payload = BTreeMap::new();
    for (key, value) in &raw.payload {
        if !is_schema_name(key) {
            return Err(ValidationError::UnknownKey(key.clone()));
        }
        let typed = json_to_payload(value).unwrap_or_else(|| PayloadValue::Str(value.to_string()));
        payload.insert(key.clone(), typed);
    }
    // PII first: a denylisted key is reported as such, not as merely unknown.
    scrub_check(&payload).map_err(ValidationError::PiiViolation)?;

    for key in schema.required.keys() {
        if !payload.contains_key(key) {
            return Err(ValidationError::MissingKey(key.clone()));
        }
    }
    for (key, value) in &payload {
        let expected = schema
            .key_type(key)
            .ok_or_else(|| ValidationError::UnknownKey(key.clone()))?;
        let ok = json_to_payload(&raw.payload[key]).is_some() && value.value_type() == expected;
        if !ok {
            return Err(ValidationError::TypeMismatch {
                key: key.clone(),
                expected,
            });
        }
    }

    Ok(EventRecord {
        subject_id,
        device_id: raw.device_id.clone(),
        stream,
        event_name: raw.event_name.clone(),
        timestamp_ms: raw.timestamp_ms,
        sequence_no: raw.sequence_no,
        session_id: raw.session_id.clone(),
        payload,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn raw(stream: &str, name: &str, payload: Value) -> RawEvent {
        RawEvent {
            stream: stream.into(),
            event_name: name.into(),
            subject_id: "ph-0001aa".into(),
            device_id: "dev-1".into(),
            session_id: "s1".into(),
            sequence_no: 1,
            timestamp_ms: 1_704_067_200_000,
            payload: payload.as_object().unwrap().clone(),
        }
    }

    #[test]
    fn order_placed_is_accepted() {
        let e = validate_event(
            &raw("ecommerce", "order_placed", json!({"sku": "A", "qty": 2})),
            &SchemaCatalog::starter(),
        )
        .unwrap();
        assert_eq!(e.payload.len(), 2);
        assert_eq!(e.payload["qty"], PayloadValue::Num(2.0));
        assert_eq!(e.payload_str("sku"), Some("A"));
    }

    #[test]
    fn email_key_is_pii() {
        let err = validate_event(
            &raw(
                "ecommerce",
                "order_placed",
                json!({"sku": "A", "qty": 2, "email": "x"}),
            ),
            &SchemaCatalog::starter(),
        )
        .unwrap_err();
        assert!(matches!(err, ValidationError::PiiViolation(_)));
    }

    #[test]
    fn missing_required_key() {
        let err = validate_event(
            &raw("ecommerce", "order_placed", json!({"sku": "A"})),
            &SchemaCatalog::starter(),
        )
        .unwrap_err();
        assert_eq!(err, ValidationError::MissingKey("qty".into()));
    }

    #[test]
    fn unknown_key_and_type_mismatch() {
        let c = SchemaCatalog::starter();
        let err = validate_event(
            &raw("ecommerce", "order_placed", json!({"sku": "A", "qty": 2, "x": 1})),
            &c,
        )
        .unwrap_err();
        assert_eq!(err, ValidationError::UnknownKey("x".into()));
        let err = validate_event(
            &raw("ecommerce", "order_placed", json!({"sku": "A", "qty": "2"})),
            &c,
        )
        .unwrap_err();
        assert!(matches!(err, ValidationError::TypeMismatch { .. }));
    }

    #[test]
    fn unknown_event_and_stream() {
        let c = SchemaCatalog::starter();
        assert!(matches!(
            validate_event(&raw("ecommerce", "refund", json!({})), &c),
            Err(ValidationError::UnknownEvent { .. })
        ));
        assert!(matches!(
            validate_event(&raw("weather", "app_open", json!({})), &c),
            Err(ValidationError::UnknownEvent { .. })
        ));
    }

    #[test]
    fn field_rules() {
        let c = SchemaCatalog::starter();
        let mut r = raw("core", "app_open", json!({}));
        r.sequence_no = 0;
        assert!(matches!(validate_event(&r, &c), Err(ValidationError::Field { .. })));
        let mut r = raw("core", "app_open", json!({}));
        r.timestamp_ms = 0;
        assert!(matches!(validate_event(&r, &c), Err(ValidationError::Field { .. })));
        let mut r = raw("core", "app_open", json!({}));
        r.device_id = "bad|id".into();
        assert!(matches!(validate_event(&r, &c), Err(ValidationError::Token(_))));
    }

    #[test]
    fn negative_zero_is_normalized() {
        let e = validate_event(
            &raw("ecommerce", "order_placed", json!({"sku": "A", "qty": -0.0})),
            &SchemaCatalog::starter(),
        )
        .unwrap();
        assert!(e.payload["qty"].as_num().unwrap().is_sign_positive());
    }
}
