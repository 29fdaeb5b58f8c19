//! Versioned flat `key=value` text format used for model/policy state and
//! scenario files.
//!
//! ```text
//! # nudgeforge-kv
//! format_version=1
//! kind=linucb
//! alpha=1
//! arm.0.a=2,0,0,2
//! ```
//!
//! Lines starting with `#` and blank lines are ignored. Keys are unique.
//! Values run to the end of the line; `%`, CR and LF inside values are
//! percent-escaped. Writers emit keys in insertion order so output is stable.

use std::fmt::Display;
use std::str::FromStr;

use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;
const HEADER: &str = "# nudgeforge-kv";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KvError {
    #[error("line {0}: expected key=value")]
    Syntax(usize),
    #[error("duplicate key `{0}`")]
    Duplicate(String),
    #[error("missing key `{0}`")]
    Missing(String),
    #[error("key `{key}`: cannot parse `{value}`")]
    BadValue { key: String, value: String },
    #[error("unsupported format_version {0}")]
    Version(String),
    #[error("expected kind `{expected}`, found `{found}`")]
    Kind { expected: String, found: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvDoc {
    entries: Vec<(String, String)>,
}

fn escape_value(v: &str) -> String {
    v.replace('%', "%25").replace('\n', "%0A").replace('\r', "%0D")
}

fn unescape_value(v: &str) -> String {
    v.replace("%0A", "\n").replace("%0D", "\r").replace("%25", "%")
}

impl KvDoc {
    /// A document carrying the format header and `kind`.
    pub fn with_kind(kind: &str) -> Self {
        let mut doc = KvDoc::default();
        doc.set("format_version", FORMAT_VERSION);
        doc.set("kind", kind);
        doc
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn set_list<T: Display>(&mut self, key: &str, values: &[T]) {
        let joined = values
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        self.set(key, joined);
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, KvError> {
        let raw = self.raw(key).ok_or_else(|| KvError::Missing(key.to_string()))?;
        raw.parse().map_err(|_| KvError::BadValue {
            key: key.to_string(),
            value: raw.to_string(),
        })
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, KvError> {
        match self.raw(key) {
            None => Ok(default),
            Some(_) => self.get(key),
        }
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, KvError> {
        let raw = self.raw(key).ok_or_else(|| KvError::Missing(key.to_string()))?;
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| {
                s.parse().map_err(|_| KvError::BadValue {
                    key: key.to_string(),
                    value: raw.to_string(),
                })
            })
            .collect()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), KvError> {
        let version = self.raw("format_version").unwrap_or("");
        if version != FORMAT_VERSION.to_string() {
            return Err(KvError::Version(version.to_string()));
        }
        let found = self.raw("kind").unwrap_or("");
        if found != kind {
            return Err(KvError::Kind {
                expected: kind.to_string(),
                found: found.to_string(),
            });
        }
        Ok(())
    }

    /// Parses without requiring the header or a version (scenario files).
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut doc = KvDoc::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(KvError::Syntax(i + 1))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(KvError::Syntax(i + 1));
            }
            if doc.raw(key).is_some() {
                return Err(KvError::Duplicate(key.to_string()));
            }
            doc.entries.push((key.to_string(), unescape_value(value.trim())));
        }
        Ok(doc)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(&escape_value(v));
            out.push('\n');
        }
        out
    }
}

/// Types with a stable key-value text form.
pub trait KvCodec: Sized {
    const KIND: &'static str;

    fn to_kv(&self) -> KvDoc;
    fn from_kv(doc: &KvDoc) -> Result<Self, KvError>;

    fn to_kv_text(&self) -> String {
        self.to_kv().to_text()
    }

    fn from_kv_text(text: &str) -> Result<Self, KvError> {
        let doc = KvDoc::parse(text)?;
        doc.expect_kind(Self::KIND)?;
        Self::from_kv(&doc)
    }
}
