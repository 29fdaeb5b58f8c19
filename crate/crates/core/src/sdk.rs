//! Device-side SDK semantics: a durable offline buffer with gap-free
//! per-device sequencing, at-least-once batch upload, watermark acks, and
//! nudge receipt/reaction logging.
//!
//! Wire bodies:
//!
//! ```text
//! v1|batch|<device_id>|<batch_seq>|<event_count>
//! <canonical event line>
//! ...
//! v1|ack|<device_id>|<watermark>|<accepted>|<duplicates>
//! ```

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_model::encode::{escape, unescape};
use crate::data_model::{
    canonical_decode, canonical_line, validate_event, validate_token, EventRecord, IllegalTransition,
    NudgeRecord, PayloadValue, RawEvent, Reaction, SchemaCatalog, Stream, SubjectId,
    ValidationError,
};

pub const DEFAULT_BUFFER_CAP: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdkError {
    #[error("buffer full ({0} events); upload before logging more")]
    BufferFull(usize),
    #[error(transparent)]
    Invalid(#[from] ValidationError),
    #[error("unknown nudge `{0}`")]
    UnknownNudge(String),
    #[error(transparent)]
    IllegalTransition(#[from] IllegalTransition),
    #[error("ack for device `{found}` applied to buffer of `{expected}`")]
    DeviceMismatch { expected: String, found: String },
    #[error("corrupt snapshot: {0}")]
    Snapshot(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed wire body: {0}")]
pub struct WireError(pub String);

/// An event as the app logs it, before the buffer assigns its sequence number.
#[derive(Debug, Clone, PartialEq)]
pub struct EventDraft {
    pub subject_id: SubjectId,
    pub stream: Stream,
    pub event_name: String,
    pub timestamp_ms: i64,
    pub payload: BTreeMap<String, PayloadValue>,
}

impl EventDraft {
    pub fn new(subject_id: SubjectId, stream: Stream, event_name: &str, timestamp_ms: i64) -> Self {
        EventDraft {
            subject_id,
            stream,
            event_name: event_name.to_string(),
            timestamp_ms,
            payload: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<PayloadValue>) -> Self {
        self.payload.insert(key.to_string(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub device_id: String,
    pub batch_seq: u64,
    /// Canonical event lines without trailing newlines.
    pub events: Vec<String>,
}

impl Batch {
    pub fn to_body(&self) -> String {
        let mut out = format!(
            "v1|batch|{}|{}|{}\n",
            self.device_id,
            self.batch_seq,
            self.events.len()
        );
        for line in &self.events {
            out.push_str(line);
            out.push('\n');
        }
        out
    }

    pub fn parse(body: &str) -> Result<Batch, WireError> {
        let mut lines = body.lines();
        let header = lines.next().ok_or_else(|| WireError("empty body".into()))?;
        let fields: Vec<&str> = header.split('|').collect();
        if fields.len() != 5 || fields[0] != "v1" || fields[1] != "batch" {
            return Err(WireError(format!("bad batch header `{header}`")));
        }
        validate_token("device_id", fields[2]).map_err(|e| WireError(e.to_string()))?;
        let batch_seq: u64 = fields[3]
            .parse()
            .map_err(|_| WireError("bad batch_seq".into()))?;
        let count: usize = fields[4]
            .parse()
            .map_err(|_| WireError("bad event_count".into()))?;
        let events: Vec<String> = lines.map(str::to_string).collect();
        if events.len() != count {
            return Err(WireError(format!(
                "header says {count} events, body has {}",
                events.len()
            )));
        }
        Ok(Batch {
            device_id: fields[2].to_string(),
            batch_seq,
            events,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub device_id: String,
    /// Highest contiguous persisted sequence number.
    pub watermark: u64,
    pub accepted: u64,
    pub duplicates: u64,
}

impl Ack {
    pub fn to_line(&self) -> String {
        format!(
            "v1|ack|{}|{}|{}|{}",
            self.device_id, self.watermark, self.accepted, self.duplicates
        )
    }

    pub fn parse(line: &str) -> Result<Ack, WireError> {
        let fields: Vec<&str> = line.trim_end().split('|').collect();
        if fields.len() != 6 || fields[0] != "v1" || fields[1] != "ack" {
            return Err(WireError(format!("bad ack `{line}`")));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|_| WireError(format!("bad number `{s}`")));
        Ok(Ack {
            device_id: fields[2].to_string(),
            watermark: num(fields[3])?,
            accepted: num(fields[4])?,
            duplicates: num(fields[5])?,
        })
    }
}

/// The on-device buffer. One logical owner; distinct buffers are independent.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceBuffer {
    device_id: String,
    session_id: String,
    next_seq: u64,
    acked_watermark: u64,
    cap: usize,
    pending: VecDeque<EventRecord>,
    pending_nudges: Vec<NudgeRecord>,
}

impl DeviceBuffer {
    pub fn new(device_id: &str) -> Self {
        Self::with_cap(device_id, DEFAULT_BUFFER_CAP)
    }

    pub fn with_cap(device_id: &str, cap: usize) -> Self {
        DeviceBuffer {
            device_id: device_id.to_string(),
            session_id: "s0".to_string(),
            next_seq: 1,
            acked_watermark: 0,
            cap,
            pending: VecDeque::new(),
            pending_nudges: Vec::new(),
        }
    }

    pub fn device_id(&self) -> &str {
        &self.device_id
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn acked_watermark(&self) -> u64 {
        self.acked_watermark
    }

    pub fn pending(&self) -> impl ExactSizeIterator<Item = &EventRecord> {
        self.pending.iter()
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn nudges(&self) -> &[NudgeRecord] {
        &self.pending_nudges
    }

    pub fn nudge(&self, nudge_id: &str) -> Option<&NudgeRecord> {
        self.pending_nudges.iter().find(|n| n.nudge_id == nudge_id)
    }

    /// Starts a new app session; subsequent events carry this session id.
    pub fn set_session(&mut self, session_id: &str) -> Result<(), ValidationError> {
        validate_token("session_id", session_id)?;
        self.session_id = session_id.to_string();
        Ok(())
    }

    /// Assigns the next sequence number and buffers the event.
    pub fn log_event(
        &mut self,
        draft: EventDraft,
        catalog: &SchemaCatalog,
    ) -> Result<EventRecord, SdkError> {
        if self.pending.len() >= self.cap {
            return Err(SdkError::BufferFull(self.cap));
        }
        let raw = RawEvent {
            stream: draft.stream.as_str().to_string(),
            event_name: draft.event_name,
            subject_id: draft.subject_id.as_str().to_string(),
            device_id: self.device_id.clone(),
            session_id: self.session_id.clone(),
            sequence_no: self.next_seq,
            timestamp_ms: draft.timestamp_ms,
            payload: draft
                .payload
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::to_value(v).expect("payload serializes")))
                .collect(),
        };
        let event = validate_event(&raw, catalog)?;
        self.pending.push_back(event.clone());
        self.next_seq += 1;
        Ok(event)
    }

    /// Splits pending events, in order, into batches of at most `max_events`.
    /// Nothing is removed; only an ack truncates the buffer.
    pub fn drain_batches(&self, max_events: usize) -> Vec<Batch> {
        let max_events = max_events.max(1);
        let lines: Vec<(u64, String)> = self
            .pending
            .iter()
            .map(|e| (e.sequence_no, canonical_line(e)))
            .collect();
        lines
            .chunks(max_events)
            .map(|chunk| Batch {
                device_id: self.device_id.clone(),
                batch_seq: chunk[0].0,
                events: chunk.iter().map(|(_, l)| l.clone()).collect(),
            })
            .collect()
    }

    /// Drops every pending event at or below the ack watermark. Stale acks are
    /// no-ops; applying the same ack twice is idempotent.
    pub fn apply_ack(&mut self, ack: &Ack) -> Result<(), SdkError> {
        if ack.device_id != self.device_id {
            return Err(SdkError::DeviceMismatch {
                expected: self.device_id.clone(),
                found: ack.device_id.clone(),
            });
        }
        while self
            .pending
            .front()
            .is_some_and(|e| e.sequence_no <= ack.watermark)
        {
            self.pending.pop_front();
        }
        self.acked_watermark = self.acked_watermark.max(ack.watermark);
        self.next_seq = self.next_seq.max(self.acked_watermark + 1);
        Ok(())
    }

    fn log_reaction(
        &mut self,
        nudge: &NudgeRecord,
        kind: Reaction,
        at_ms: i64,
        catalog: &SchemaCatalog,
    ) -> Result<EventRecord, SdkError> {
        let draft = EventDraft::new(nudge.subject_id.clone(), Stream::Core, "nudge_reaction", at_ms)
            .with("nudge_id", nudge.nudge_id.as_str())
            .with("kind", kind.as_str())
            .with("experiment_id", nudge.experiment_id.as_str());
        self.log_event(draft, catalog)
    }

    /// Accepts polled nudges: new ids are marked delivered and a `delivered`
    /// reaction event is logged for each. Known ids are ignored.
    pub fn receive_nudges(
        &mut self,
        payloads: Vec<NudgeRecord>,
        at_ms: i64,
        catalog: &SchemaCatalog,
    ) -> Result<Vec<String>, SdkError> {
        let mut delivered = Vec::new();
        for mut nudge in payloads {
            if self.nudge(&nudge.nudge_id).is_some() || nudge.reaction != Reaction::Pending {
                continue;
            }
            if self.pending.len() >= self.cap {
                return Err(SdkError::BufferFull(self.cap));
            }
            nudge.transition(Reaction::Delivered, at_ms)?;
            self.log_reaction(&nudge, Reaction::Delivered, at_ms, catalog)?;
            delivered.push(nudge.nudge_id.clone());
            self.pending_nudges.push(nudge);
        }
        Ok(delivered)
    }

    pub fn record_reaction(
        &mut self,
        nudge_id: &str,
        kind: Reaction,
        at_ms: i64,
        catalog: &SchemaCatalog,
    ) -> Result<EventRecord, SdkError> {
        let idx = self
            .pending_nudges
            .iter()
            .position(|n| n.nudge_id == nudge_id)
            .ok_or_else(|| SdkError::UnknownNudge(nudge_id.to_string()))?;
        let current = self.pending_nudges[idx].reaction;
        if !(current == Reaction::Delivered && kind.is_terminal()) {
            return Err(IllegalTransition { from: current, to: kind }.into());
        }
        if self.pending.len() >= self.cap {
            return Err(SdkError::BufferFull(self.cap));
        }
        let mut updated = self.pending_nudges[idx].clone();
        updated.transition(kind, at_ms)?;
        let event = self.log_reaction(&updated, kind, at_ms, catalog)?;
        self.pending_nudges[idx] = updated;
        Ok(event)
    }

    /// Serializes the full buffer state; `restore` of the result is lossless.
    pub fn snapshot(&self) -> String {
        let mut out = format!(
            "v1|buffer|{}|{}|{}|{}|{}|{}|{}\n",
            self.device_id,
            self.next_seq,
            self.acked_watermark,
            self.cap,
            self.session_id,
            self.pending.len(),
            self.pending_nudges.len()
        );
        for e in &self.pending {
            out.push_str(&canonical_line(e));
            out.push('\n');
        }
        for n in &self.pending_nudges {
            out.push_str(&format!(
                "v1|nudge|{}|{}|{}|{}|{}|{}|{}|{}\n",
                n.nudge_id,
                n.subject_id,
                n.experiment_id,
                n.arm_id,
                escape(&n.content_ref),
                n.sent_at_ms,
                n.reaction.as_str(),
                n.reaction_at_ms.map_or("-".to_string(), |t| t.to_string())
            ));
        }
        out
    }

    pub fn restore(snapshot: &str, catalog: &SchemaCatalog) -> Result<DeviceBuffer, SdkError> {
        let bad = |m: &str| SdkError::Snapshot(m.to_string());
        if !snapshot.ends_with('\n') {
            return Err(bad("truncated"));
        }
        let mut lines = snapshot.lines();
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty"))?.split('|').collect();
        if header.len() != 9 || header[0] != "v1" || header[1] != "buffer" {
            return Err(bad("bad header"));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|_| bad("bad number"));
        let mut buf = DeviceBuffer {
            device_id: header[2].to_string(),
            next_seq: num(header[3])?,
            acked_watermark: num(header[4])?,
            cap: num(header[5])? as usize,
            session_id: header[6].to_string(),
            pending: VecDeque::new(),
            pending_nudges: Vec::new(),
        };
        let n_pending = num(header[7])? as usize;
        let n_nudges = num(header[8])? as usize;
        for _ in 0..n_pending {
            let line = lines.next().ok_or_else(|| bad("truncated events"))?;
            let e = canonical_decode(line.as_bytes(), catalog).map_err(|e| SdkError::Snapshot(e.to_string()))?;
            buf.pending.push_back(e);
        }
        for _ in 0..n_nudges {
            let line = lines.next().ok_or_else(|| bad("truncated nudges"))?;
            let f: Vec<&str> = line.split('|').collect();
            if f.len() != 10 || f[1] != "nudge" {
                return Err(bad("bad nudge line"));
            }
            buf.pending_nudges.push(NudgeRecord {
                nudge_id: f[2].to_string(),
                subject_id: SubjectId::new(f[3]).map_err(|e| SdkError::Snapshot(e.to_string()))?,
                experiment_id: f[4].to_string(),
                arm_id: f[5].parse().map_err(|_| bad("bad arm"))?,
                content_ref: unescape(f[6]).map_err(|e| SdkError::Snapshot(e.to_string()))?,
                sent_at_ms: f[7].parse().map_err(|_| bad("bad sent_at"))?,
                reaction: Reaction::parse(f[8]).ok_or_else(|| bad("bad reaction"))?,
                reaction_at_ms: match f[9] {
                    "-" => None,
                    t => Some(t.parse().map_err(|_| bad("bad reaction_at"))?),
                },
            });
        }
        if lines.next().is_some() {
            return Err(bad("trailing data"));
        }
        Ok(buf)
    }
}
