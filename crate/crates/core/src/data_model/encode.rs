//! Canonical single-line event encoding.
//!
//! ```text
//! v1|<stream>|<event_name>|<subject_id>|<device_id>|<session_id>|<sequence_no>|<timestamp_ms>|<payload>
//! ```
//!
//! `<payload>` is `key=value` pairs in lexicographic key order joined by `&`.
//! Values are written by type: numbers in shortest round-trip decimal form,
//! booleans as `true`/`false`, strings percent-escaped, string lists as
//! escaped elements joined by `,`. Every byte outside
//! `[A-Za-z0-9._~:/@+-]` in a string is written as `%XX` (uppercase hex of
//! its UTF-8 encoding). The line ends with a single `\n`.
//!
//! Decoding is strict: a line that is not byte-identical to the encoding of
//! what it decodes to is rejected, so every event has exactly one line.

use std::fmt::Write;

use serde_json::Value;

use super::catalog::{SchemaCatalog, ValueType};
use super::event::{validate_event, EventRecord, RawEvent, ValidationError};
use super::PayloadValue;

pub const LINE_VERSION: &str = "v1";
const FIELD_COUNT: usize = 9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecodeError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

fn parse_err(msg: impl Into<String>) -> DecodeError {
    DecodeError::Parse(msg.into())
}

fn is_unreserved(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'~' | b':' | b'/' | b'@' | b'+' | b'-')
}

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    escape_into(s, &mut out);
    out
}

fn escape_into(s: &str, out: &mut String) {
    for &b in s.as_bytes() {
        if is_unreserved(b) {
            out.push(b as char);
        } else {
            let _ = write!(out, "%{b:02X}");
        }
    }
}

pub fn unescape(s: &str) -> Result<String, DecodeError> {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = s
                .get(i + 1..i + 3)
                .ok_or_else(|| parse_err("truncated escape"))?;
            let b = u8::from_str_radix(hex, 16).map_err(|_| parse_err("bad escape"))?;
            out.push(b);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).map_err(|_| parse_err("escape is not utf-8"))
}

pub fn format_num(n: f64) -> String {
    format!("{n}")
}

fn encode_value(value: &PayloadValue, out: &mut String) {
    match value {
        PayloadValue::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        PayloadValue::Num(n) => {
            let _ = write!(out, "{n}");
        }
        PayloadValue::Str(s) => escape_into(s, out),
        PayloadValue::List(items) => {
            for (i, s) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                escape_into(s, out);
            }
        }
    }
}

/// The canonical line without its trailing newline.
pub fn canonical_line(event: &EventRecord) -> String {
    let mut out = String::with_capacity(128);
    let _ = write!(
        out,
        "{LINE_VERSION}|{}|{}|{}|{}|{}|{}|{}|",
        event.stream,
        event.event_name,
        event.subject_id,
        event.device_id,
        event.session_id,
        event.sequence_no,
        event.timestamp_ms,
    );
    for (i, (k, v)) in event.payload.iter().enumerate() {
        if i > 0 {
            out.push('&');
        }
        out.push_str(k);
        out.push('=');
        encode_value(v, &mut out);
    }
    out
}

/// Canonical newline-terminated bytes for a valid event.
pub fn canonical_encode(event: &EventRecord) -> Vec<u8> {
    let mut line = canonical_line(event);
    line.push('\n');
    line.into_bytes()
}

fn decode_value(raw: &str, ty: Option<ValueType>) -> Result<Value, DecodeError> {
    Ok(match ty {
        Some(ValueType::Num) => {
            let n: f64 = raw.parse().map_err(|_| parse_err("bad number"))?;
            if !n.is_finite() {
                return Err(parse_err("non-finite number"));
            }
            serde_json::Number::from_f64(n)
                .map(Value::Number)
                .ok_or_else(|| parse_err("bad number"))?
        }
        Some(ValueType::Bool) => match raw {
            "true" => Value::Bool(true),
            "false" => Value::Bool(false),
            _ => return Err(parse_err("bad boolean")),
        },
        Some(ValueType::List) => {
            if raw.is_empty() {
                Value::Array(Vec::new())
            } else {
                Value::Array(
                    raw.split(',')
                        .map(|s| unescape(s).map(Value::String))
                        .collect::<Result<_, _>>()?,
                )
            }
        }
        Some(ValueType::Str) | None => Value::String(unescape(raw)?),
    })
}

/// Parses one canonical line (with or without its newline) and re-validates it.
pub fn canonical_decode(line: &[u8], catalog: &SchemaCatalog) -> Result<EventRecord, DecodeError> {
    let text = std::str::from_utf8(line).map_err(|_| parse_err("not utf-8"))?;
    let text = text.strip_suffix('\n').unwrap_or(text);
    let fields: Vec<&str> = text.split('|').collect();
    if fields.len() != FIELD_COUNT {
        return Err(parse_err(format!(
            "expected {FIELD_COUNT} fields, found {}",
            fields.len()
        )));
    }
    if fields[0] != LINE_VERSION {
        return Err(parse_err(format!("unsupported version `{}`", fields[0])));
    }
    let sequence_no: u64 = fields[6].parse().map_err(|_| parse_err("bad sequence_no"))?;
    let timestamp_ms: i64 = fields[7].parse().map_err(|_| parse_err("bad timestamp_ms"))?;

    let schema = fields[1]
        .parse()
        .ok()
        .and_then(|stream| catalog.get(stream, fields[2]));
    let mut payload = serde_json::Map::new();
    if !fields[8].is_empty() {
        for pair in fields[8].split('&') {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| parse_err("payload pair without `=`"))?;
            let ty = schema.and_then(|s| s.key_type(key));
            if payload.insert(key.to_string(), decode_value(value, ty)?).is_some() {
                return Err(parse_err(format!("duplicate payload key `{key}`")));
            }
        }
    }

    let raw = RawEvent {
        stream: fields[1].to_string(),
        event_name: fields[2].to_string(),
        subject_id: fields[3].to_string(),
        device_id: fields[4].to_string(),
        session_id: fields[5].to_string(),
        sequence_no,
        timestamp_ms,
        payload,
    };
    let event = validate_event(&raw, catalog)?;
    if canonical_line(&event) != text {
        return Err(parse_err("line is not in canonical form"));
    }
    Ok(event)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{Stream, SubjectId};
    use std::collections::BTreeMap;

    fn order(sku: &str, qty: f64) -> EventRecord {
        let mut payload = BTreeMap::new();
        payload.insert("sku".to_string(), PayloadValue::Str(sku.into()));
        payload.insert("qty".to_string(), PayloadValue::Num(qty));
        EventRecord {
            subject_id: SubjectId::new("ph-0001aa").unwrap(),
            device_id: "dev-1".into(),
            stream: Stream::Ecommerce,
            event_name: "order_placed".into(),
            timestamp_ms: 1_704_067_200_123,
            sequence_no: 7,
            session_id: "s1".into(),
            payload,
        }
    }

    #[test]
    fn exact_line_format() {
        let bytes = canonical_encode(&order("SKU 1|x", 2.0));
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            "v1|ecommerce|order_placed|ph-0001aa|dev-1|s1|7|1704067200123|qty=2&sku=SKU%201%7Cx\n"
        );
    }

    #[test]
    fn encode_is_deterministic_and_round_trips() {
        let c = SchemaCatalog::starter();
        let e = order("A", 2.5);
        assert_eq!(canonical_encode(&e), canonical_encode(&e));
        assert_eq!(canonical_decode(&canonical_encode(&e), &c).unwrap(), e);
    }

    #[test]
    fn insertion_order_does_not_matter() {
        let a = order("A", 1.0);
        let mut b = a.clone();
        b.payload = BTreeMap::new();
        b.payload.insert("qty".into(), PayloadValue::Num(1.0));
        b.payload.insert("sku".into(), PayloadValue::Str("A".into()));
        assert_eq!(canonical_encode(&a), canonical_encode(&b));
    }

    #[test]
    fn truncated_line_is_parse_error() {
        let c = SchemaCatalog::starter();
        let bytes = canonical_encode(&order("A", 1.0));
        let cut = &bytes[..20];
        assert!(matches!(canonical_decode(cut, &c), Err(DecodeError::Parse(_))));
    }

    #[test]
    fn unregistered_event_is_unknown() {
        let c = SchemaCatalog::starter();
        let line = b"v1|ecommerce|refund|ph-0001aa|dev-1|s1|1|5|sku=A\n";
        assert!(matches!(
            canonical_decode(line, &c),
            Err(DecodeError::Invalid(ValidationError::UnknownEvent { .. }))
        ));
    }

    #[test]
    fn non_canonical_lines_rejected() {
        let c = SchemaCatalog::starter();
        // keys out of order
        let line = b"v1|ecommerce|order_placed|ph-0001aa|dev-1|s1|1|5|sku=A&qty=1";
        assert!(canonical_decode(line, &c).is_err());
        // number not in shortest form
        let line = b"v1|ecommerce|order_placed|ph-0001aa|dev-1|s1|1|5|qty=1.0&sku=A";
        assert!(canonical_decode(line, &c).is_err());
        // lowercase escape
        let line = b"v1|ecommerce|order_placed|ph-0001aa|dev-1|s1|1|5|qty=1&sku=a%7cb";
        assert!(canonical_decode(line, &c).is_err());
    }
}
