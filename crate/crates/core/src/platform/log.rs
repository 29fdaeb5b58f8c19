//! Append-only event log: canonical lines in arrival order plus indices that
//! are rebuilt exactly by replaying the lines.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::data_model::{
    canonical_decode, DecodeError, EventRecord, Reaction, SchemaCatalog, Stream,
    SubjectId,
};
use crate::sdk::{Ack, Batch};

pub const DEFAULT_SEGMENT_LINES: usize = 100_000;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed batch: {0}")]
    MalformedBatch(String),
    #[error("line {line}: {source}")]
    Validation {
        line: usize,
        #[source]
        source: DecodeError,
    },
    #[error("storage failure, batch not applied: {0}")]
    Storage(#[from] io::Error),
}

#[derive(Debug, Error)]
pub enum OpenError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{file}:{line}: {source}")]
    Corrupt {
        file: PathBuf,
        line: usize,
        #[source]
        source: DecodeError,
    },
    #[error("{file}:{line}: duplicate event for device {device} seq {seq}")]
    Duplicate {
        file: PathBuf,
        line: usize,
        device: String,
        seq: u64,
    },
}

/// Per-device persisted sequence numbers, stored as a contiguous watermark
/// plus the out-of-order sequence numbers above it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeviceIndex {
    watermark: u64,
    above: BTreeSet<u64>,
}

impl DeviceIndex {
    pub fn watermark(&self) -> u64 {
        self.watermark
    }

    pub fn contains(&self, seq: u64) -> bool {
        seq <= self.watermark || self.above.contains(&seq)
    }

    fn insert(&mut self, seq: u64) {
        if seq <= self.watermark {
            return;
        }
        self.above.insert(seq);
        while self.above.remove(&(self.watermark + 1)) {
            self.watermark += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReactionEvent {
    pub nudge_id: String,
    pub experiment_id: Option<String>,
    pub subject_id: SubjectId,
    pub kind: Reaction,
    pub timestamp_ms: i64,
}

/// Segment files of canonical lines under one directory.
#[derive(Debug)]
struct SegmentStore {
    dir: PathBuf,
    max_lines: usize,
    current: usize,
    current_lines: usize,
}

fn segment_name(i: usize) -> String {
    format!("segment-{i:06}.log")
}

impl SegmentStore {
    fn path(&self, i: usize) -> PathBuf {
        self.dir.join(segment_name(i))
    }

    fn append(&mut self, lines: &[String]) -> io::Result<()> {
        if lines.is_empty() {
            return Ok(());
        }
        if self.current_lines > 0 && self.current_lines + lines.len() > self.max_lines {
            self.current += 1;
            self.current_lines = 0;
        }
        let mut body = String::new();
        for l in lines {
            body.push_str(l);
            body.push('\n');
        }
        let path = self.path(self.current);
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        let before = file.metadata()?.len();
        let written = file.write_all(body.as_bytes()).and_then(|_| file.sync_data());
        if let Err(e) = written {
            // leave no partial batch behind
            let _ = file.set_len(before);
            return Err(e);
        }
        self.current_lines += lines.len();
        Ok(())
    }
}

fn list_segments(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("segment-") && n.ends_with(".log"))
        })
        .collect();
    files.sort();
    Ok(files)
}

#[derive(Debug)]
pub struct EventLog {
    catalog: SchemaCatalog,
    lines: Vec<String>,
    events: Vec<EventRecord>,
    devices: BTreeMap<String, DeviceIndex>,
    /// Event indices per subject, ordered by (timestamp, arrival).
    subjects: BTreeMap<SubjectId, Vec<usize>>,
    reactions: Vec<ReactionEvent>,
    nudge_state: BTreeMap<String, (Reaction, i64)>,
    store: Option<SegmentStore>,
}

impl EventLog {
    /// An in-memory log with no backing files.
    pub fn in_memory(catalog: SchemaCatalog) -> Self {
        EventLog {
            catalog,
            lines: Vec::new(),
            events: Vec::new(),
            devices: BTreeMap::new(),
            subjects: BTreeMap::new(),
            reactions: Vec::new(),
            nudge_state: BTreeMap::new(),
            store: None,
        }
    }

    /// Opens (creating if needed) a log directory and replays every segment.
    pub fn open(dir: &Path, catalog: SchemaCatalog, segment_lines: usize) -> Result<Self, OpenError> {
        fs::create_dir_all(dir)?;
        let mut log = EventLog::in_memory(catalog);
        let segments = list_segments(dir)?;
        let mut last_lines = 0;
        for path in &segments {
            let mut file = OpenOptions::new().read(true).write(true).open(path)?;
            let mut text = String::new();
            file.read_to_string(&mut text)?;
            // a torn final write has no newline; drop it
            if !text.is_empty() && !text.ends_with('\n') {
                let keep = text.rfind('\n').map_or(0, |i| i + 1);
                file.set_len(keep as u64)?;
                file.seek(SeekFrom::End(0))?;
                text.truncate(keep);
            }
            last_lines = 0;
            for (i, line) in text.lines().enumerate() {
                let event = canonical_decode(line.as_bytes(), &log.catalog).map_err(|source| {
                    OpenError::Corrupt {
                        file: path.clone(),
                        line: i + 1,
                        source,
                    }
                })?;
                if log.contains(&event.device_id, event.sequence_no) {
                    return Err(OpenError::Duplicate {
                        file: path.clone(),
                        line: i + 1,
                        device: event.device_id,
                        seq: event.sequence_no,
                    });
                }
                log.apply(line.to_string(), event);
                last_lines += 1;
            }
        }
        let current = segments
            .last()
            .and_then(|p| p.file_name()?.to_str()?.get(8..14)?.parse().ok())
            .unwrap_or(0);
        log.store = Some(SegmentStore {
            dir: dir.to_path_buf(),
            max_lines: segment_lines.max(1),
            current,
            current_lines: last_lines,
        });
        Ok(log)
    }

    pub fn catalog(&self) -> &SchemaCatalog {
        &self.catalog
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn contains(&self, device_id: &str, seq: u64) -> bool {
        self.devices.get(device_id).is_some_and(|d| d.contains(seq))
    }

    pub fn watermark(&self, device_id: &str) -> u64 {
        self.devices.get(device_id).map_or(0, DeviceIndex::watermark)
    }

    /// Canonical lines in arrival (storage) order.
    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    /// All lines as stored, newline-terminated.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for l in &self.lines {
            out.push_str(l);
            out.push('\n');
        }
        out
    }

    /// Lines ordered by (device, sequence): independent of arrival order.
    pub fn sorted_lines(&self) -> Vec<&str> {
        let mut idx: Vec<usize> = (0..self.events.len()).collect();
        idx.sort_by(|&a, &b| {
            let (ea, eb) = (&self.events[a], &self.events[b]);
            (&ea.device_id, ea.sequence_no).cmp(&(&eb.device_id, eb.sequence_no))
        });
        idx.into_iter().map(|i| self.lines[i].as_str()).collect()
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    /// Subjects with at least one persisted event.
    pub fn subjects(&self) -> impl Iterator<Item = &SubjectId> {
        self.subjects.keys()
    }

    pub fn has_subject(&self, subject: &SubjectId) -> bool {
        self.subjects.contains_key(subject)
    }

    /// A subject's events in timestamp order.
    pub fn subject_events<'a>(&'a self, subject: &SubjectId) -> impl Iterator<Item = &'a EventRecord> + 'a {
        self.subjects
            .get(subject)
            .into_iter()
            .flatten()
            .map(move |&i| &self.events[i])
    }

    /// A subject's events with `from_exclusive < timestamp <= to_inclusive`.
    pub fn subject_events_between<'a>(
        &'a self,
        subject: &SubjectId,
        from_exclusive: i64,
        to_inclusive: i64,
    ) -> impl Iterator<Item = &'a EventRecord> + 'a {
        let idx: &[usize] = self.subjects.get(subject).map_or(&[], Vec::as_slice);
        let lo = idx.partition_point(|&i| self.events[i].timestamp_ms <= from_exclusive);
        let hi = idx.partition_point(|&i| self.events[i].timestamp_ms <= to_inclusive);
        idx[lo..hi.max(lo)].iter().map(move |&i| &self.events[i])
    }

    /// The device that most recently logged for this subject.
    pub fn device_of(&self, subject: &SubjectId) -> Option<&str> {
        self.subject_events(subject)
            .last()
            .map(|e| e.device_id.as_str())
    }

    pub fn reactions(&self) -> &[ReactionEvent] {
        &self.reactions
    }

    /// Furthest lifecycle state reported for a nudge, with its timestamp.
    pub fn nudge_reaction(&self, nudge_id: &str) -> Option<(Reaction, i64)> {
        self.nudge_state.get(nudge_id).copied()
    }

    fn apply(&mut self, line: String, event: EventRecord) {
        let idx = self.events.len();
        self.devices
            .entry(event.device_id.clone())
            .or_default()
            .insert(event.sequence_no);
        if event.stream == Stream::Core && event.event_name == "nudge_reaction" {
            let kind = event.payload_str("kind").and_then(Reaction::parse);
            if let (Some(kind), Some(nudge_id)) = (kind, event.payload_str("nudge_id")) {
                self.reactions.push(ReactionEvent {
                    nudge_id: nudge_id.to_string(),
                    experiment_id: event.payload_str("experiment_id").map(str::to_string),
                    subject_id: event.subject_id.clone(),
                    kind,
                    timestamp_ms: event.timestamp_ms,
                });
                let slot = self
                    .nudge_state
                    .entry(nudge_id.to_string())
                    .or_insert((kind, event.timestamp_ms));
                if kind > slot.0 && !slot.0.is_terminal() {
                    *slot = (kind, event.timestamp_ms);
                }
            }
        }
        let ts = event.timestamp_ms;
        let list = self.subjects.entry(event.subject_id.clone()).or_default();
        let events = &self.events;
        let pos = list.partition_point(|&i| events[i].timestamp_ms <= ts);
        list.insert(pos, idx);
        self.events.push(event);
        self.lines.push(line);
    }

    /// Persists the events of `batch` not already present, all or nothing.
    pub fn ingest_batch(&mut self, batch: &Batch) -> Result<Ack, IngestError> {
        let mut decoded = Vec::with_capacity(batch.events.len());
        let mut prev_seq = 0u64;
        for (i, line) in batch.events.iter().enumerate() {
            let event = canonical_decode(line.as_bytes(), &self.catalog)
                .map_err(|source| IngestError::Validation { line: i + 1, source })?;
            if event.device_id != batch.device_id {
                return Err(IngestError::MalformedBatch(format!(
                    "line {} belongs to device {}",
                    i + 1,
                    event.device_id
                )));
            }
            if event.sequence_no <= prev_seq {
                return Err(IngestError::MalformedBatch(
                    "sequence numbers must strictly increase".into(),
                ));
            }
            prev_seq = event.sequence_no;
            decoded.push(event);
        }
        let (lines, fresh): (Vec<String>, Vec<EventRecord>) = batch
            .events
            .iter()
            .map(|l| l.strip_suffix('\n').unwrap_or(l).to_string())
            .zip(decoded)
            .filter(|(_, e)| !self.contains(&e.device_id, e.sequence_no))
            .unzip();
        let duplicates = (batch.events.len() - fresh.len()) as u64;
        if let Some(store) = self.store.as_mut() {
            store.append(&lines)?;
        }
        let accepted = fresh.len() as u64;
        for (line, event) in lines.into_iter().zip(fresh) {
            self.apply(line, event);
        }
        Ok(Ack {
            device_id: batch.device_id.clone(),
            watermark: self.watermark(&batch.device_id),
            accepted,
            duplicates,
        })
    }

    /// Segment file paths backing this log, if any.
    pub fn segment_files(&self) -> io::Result<Vec<PathBuf>> {
        match &self.store {
            Some(s) => list_segments(&s.dir),
            None => Ok(Vec::new()),
        }
    }
}

/// Writes `log`'s lines as a fresh segment directory (used for exports).
pub fn export_segments(log: &EventLog, dir: &Path, segment_lines: usize) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    for (i, chunk) in log.lines().chunks(segment_lines.max(1)).enumerate() {
        let mut f = File::create(dir.join(segment_name(i)))?;
        for l in chunk {
            f.write_all(l.as_bytes())?;
            f.write_all(b"\n")?;
        }
    }
    Ok(())
}
