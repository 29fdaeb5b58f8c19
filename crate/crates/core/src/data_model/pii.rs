//! Denylist and pattern based guard against personally identifying payloads.

use std::collections::BTreeMap;

use super::PayloadValue;

/// Payload key names that are never accepted, in any stream.
pub const DENYLISTED_KEYS: &[&str] = &[
    "name",
    "email",
    "phone",
    "address",
    "dob",
    "national_id",
    "msisdn",
];

/// Characters that may sit between the digits of a phone number.
const PHONE_SEPARATORS: &[char] = &[' ', '-', '.', '(', ')', '+', '/'];
const PHONE_MIN_DIGITS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PiiReason {
    DenylistedKey,
    EmailPattern,
    PhonePattern,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct PiiViolation {
    pub key: String,
    pub reason: PiiReason,
}

impl std::fmt::Display for PiiViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let what = match self.reason {
            PiiReason::DenylistedKey => "denylisted key",
            PiiReason::EmailPattern => "email-like value",
            PiiReason::PhonePattern => "phone-like value",
        };
        write!(f, "{what} at `{}`", self.key)
    }
}

pub fn is_denylisted_key(key: &str) -> bool {
    let lower = key.to_ascii_lowercase();
    DENYLISTED_KEYS.contains(&lower.as_str())
}

/// `local@domain` with both sides nonempty.
pub fn looks_like_email(value: &str) -> bool {
    value.char_indices().any(|(i, c)| {
        if c != '@' {
            return false;
        }
        let local = &value[..i];
        let domain = &value[i + 1..];
        local.chars().last().is_some_and(|c| !c.is_whitespace())
            && domain.chars().next().is_some_and(|c| !c.is_whitespace() && c != '@')
    })
}

/// Seven or more digits in a run, where separators do not break the run.
pub fn looks_like_phone(value: &str) -> bool {
    let mut digits = 0usize;
    for c in value.chars() {
        if c.is_ascii_digit() {
            digits += 1;
            if digits >= PHONE_MIN_DIGITS {
                return true;
            }
        } else if !PHONE_SEPARATORS.contains(&c) {
            digits = 0;
        }
    }
    false
}

/// Any violation a single string value carries, tagged with `key`.
pub fn check_value(key: &str, value: &str, out: &mut Vec<PiiViolation>) {
    if looks_like_email(value) {
        out.push(PiiViolation {
            key: key.to_string(),
            reason: PiiReason::EmailPattern,
        });
    }
    if looks_like_phone(value) {
        out.push(PiiViolation {
            key: key.to_string(),
            reason: PiiReason::PhonePattern,
        });
    }
}

/// Checks a payload for denylisted keys and email/phone shaped string values.
///
/// Returns `Ok(())` for a clean payload, otherwise every violation found.
pub fn scrub_check(payload: &BTreeMap<String, PayloadValue>) -> Result<(), Vec<PiiViolation>> {
    let mut violations = Vec::new();
    for (key, value) in payload {
        if is_denylisted_key(key) {
            violations.push(PiiViolation {
                key: key.clone(),
                reason: PiiReason::DenylistedKey,
            });
        }
        match value {
            PayloadValue::Str(s) => check_value(key, s, &mut violations),
            PayloadValue::List(items) => {
                for item in items {
                    check_value(key, item, &mut violations);
                }
            }
            PayloadValue::Num(_) | PayloadValue::Bool(_) => {}
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn payload(pairs: &[(&str, PayloadValue)]) -> BTreeMap<String, PayloadValue> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect()
    }

    #[test]
    fn clean_payload_passes() {
        let p = payload(&[
            ("sku", PayloadValue::Str("A".into())),
            ("qty", PayloadValue::Num(2.0)),
        ]);
        assert!(scrub_check(&p).is_ok());
    }

    #[test]
    fn email_value_is_flagged() {
        let p = payload(&[("contact", PayloadValue::Str("jane@x.org".into()))]);
        let v = scrub_check(&p).unwrap_err();
        assert_eq!(
            v,
            vec![PiiViolation {
                key: "contact".into(),
                reason: PiiReason::EmailPattern
            }]
        );
    }

    #[test]
    fn phone_key_and_value_both_flagged() {
        let p = payload(&[("phone", PayloadValue::Str("+1 555 010 1234".into()))]);
        let v = scrub_check(&p).unwrap_err();
        assert_eq!(v.len(), 2);
        assert!(v.iter().any(|x| x.reason == PiiReason::DenylistedKey));
        assert!(v.iter().any(|x| x.reason == PiiReason::PhonePattern));
    }

    #[test]
    fn email_pattern_edges() {
        assert!(!looks_like_email("@x.org"));
        assert!(!looks_like_email("jane@"));
        assert!(!looks_like_email("no-at-sign"));
        assert!(looks_like_email("a@b"));
    }

    #[test]
    fn phone_pattern_edges() {
        assert!(!looks_like_phone("SKU042"));
        assert!(!looks_like_phone("123456"));
        assert!(looks_like_phone("1234567"));
        assert!(looks_like_phone("(555) 010-12"));
        // a letter breaks the run
        assert!(!looks_like_phone("555a0101"));
    }

    #[test]
    fn list_elements_are_checked() {
        let p = payload(&[(
            "tags",
            PayloadValue::List(vec!["ok".into(), "x@y.z".into()]),
        )]);
        assert_eq!(scrub_check(&p).unwrap_err().len(), 1);
    }

    #[test]
    fn denylist_is_case_insensitive() {
        assert!(is_denylisted_key("Email"));
        assert!(!is_denylisted_key("emailed"));
    }
}
