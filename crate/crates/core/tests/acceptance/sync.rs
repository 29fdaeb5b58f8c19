//! Randomized device/backend traces for the exactly-once sync check.

use proptest::prelude::*;

use nudgeforge_core::data_model::{canonical_line, day_start_ms, SchemaCatalog, Stream, SubjectId};
use nudgeforge_core::platform::EventLog;
use nudgeforge_core::sdk::{DeviceBuffer, EventDraft};

pub const DEVICES: usize = 3;

#[derive(Debug, Clone)]
pub enum Op {
    Log { dev: usize, n: u8 },
    Connectivity { dev: usize, online: bool },
    /// Upload pending events in batches of `batch`; requests after the
    /// first `delivered` are lost, and acks flagged in `lost_acks` never
    /// reach the device.
    Sync { dev: usize, batch: usize, delivered: u8, lost_acks: u8 },
    /// Persist the buffer, including acks applied so far.
    Persist { dev: usize },
    /// Restart from the last persisted buffer.
    Crash { dev: usize },
}

pub fn op() -> impl Strategy<Value = Op> {
    let dev = 0..DEVICES;
    prop_oneof![
        4 => (dev.clone(), 1u8..6).prop_map(|(dev, n)| Op::Log { dev, n }),
        2 => (dev.clone(), any::<bool>()).prop_map(|(dev, online)| Op::Connectivity { dev, online }),
        4 => (dev.clone(), 1usize..5, 0u8..4, any::<u8>())
            .prop_map(|(dev, batch, delivered, lost_acks)| Op::Sync { dev, batch, delivered, lost_acks }),
        1 => dev.clone().prop_map(|dev| Op::Persist { dev }),
        1 => dev.prop_map(|dev| Op::Crash { dev }),
    ]
}

struct Device {
    buffer: DeviceBuffer,
    persisted: String,
    online: bool,
    subject: SubjectId,
}

/// Outcome of one trace: `Err` carries the first violated property.
pub fn run_trace(ops: &[Op]) -> Result<(), String> {
    let catalog = SchemaCatalog::starter();
    let mut log = EventLog::in_memory(SchemaCatalog::starter());
    let mut devices: Vec<Device> = (0..DEVICES)
        .map(|i| {
            let buffer = DeviceBuffer::new(&format!("device-{i:03}"));
            Device {
                persisted: buffer.snapshot(),
                buffer,
                online: true,
                subject: SubjectId::new(format!("pharmacy-{i:04}")).expect("valid id"),
            }
        })
        .collect();
    let mut truth: Vec<String> = Vec::new();
    let mut clock = day_start_ms(0);

    let sync = |d: &mut Device, log: &mut EventLog, batch: usize, delivered: usize, lost_acks: u8| -> Result<(), String> {
        for (i, b) in d.buffer.drain_batches(batch).into_iter().enumerate() {
            if i >= delivered {
                break;
            }
            let ack = log.ingest_batch(&b).map_err(|e| format!("ingest failed: {e}"))?;
            if i < 8 && lost_acks & (1 << i) != 0 {
                break;
            }
            d.buffer.apply_ack(&ack).map_err(|e| format!("ack failed: {e}"))?;
        }
        Ok(())
    };

    for op in ops {
        match *op {
            Op::Log { dev, n } => {
                let d = &mut devices[dev];
                for _ in 0..n {
                    clock += 1_000;
                    let draft = EventDraft::new(d.subject.clone(), Stream::Core, "app_open", clock).with("screen", "home");
                    let event = d.buffer.log_event(draft, &catalog).map_err(|e| format!("log failed: {e}"))?;
                    truth.push(canonical_line(&event));
                }
                // Logged events are durable the moment they are accepted.
                d.persisted = d.buffer.snapshot();
            }
            Op::Connectivity { dev, online } => devices[dev].online = online,
            Op::Sync { dev, batch, delivered, lost_acks } => {
                let d = &mut devices[dev];
                if d.online {
                    sync(d, &mut log, batch, delivered as usize, lost_acks)?;
                }
            }
            Op::Persist { dev } => devices[dev].persisted = devices[dev].buffer.snapshot(),
            Op::Crash { dev } => {
                let d = &mut devices[dev];
                d.buffer = DeviceBuffer::restore(&d.persisted, &catalog).map_err(|e| format!("restore failed: {e}"))?;
            }
        }
    }

    for d in &mut devices {
        d.online = true;
        for _ in 0..4 {
            sync(d, &mut log, 7, usize::MAX, 0)?;
        }
        if d.buffer.pending_len() != 0 {
            return Err(format!("{} still has {} pending events", d.buffer.device_id(), d.buffer.pending_len()));
        }
    }

    let mut got: Vec<String> = log.lines().to_vec();
    got.sort();
    truth.sort();
    if got != truth {
        return Err(format!("log has {} events, ground truth {}", got.len(), truth.len()));
    }
    for i in 0..DEVICES {
        let id = format!("device-{i:03}");
        let seqs: Vec<u64> = log.events().iter().filter(|e| e.device_id == id).map(|e| e.sequence_no).collect();
        if seqs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(format!("{id} events out of order: {seqs:?}"));
        }
    }
    Ok(())
}
