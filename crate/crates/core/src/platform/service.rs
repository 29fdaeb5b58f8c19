use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{evaluate_cohort, CohortDefinition, CohortError, EventLog, IngestError, OpenError, TraitError, TraitRegistry};
use crate::data_model::{NudgeRecord, SchemaCatalog, SubjectId, TraitValue};
use crate::experiment::{ControlAction, ExperimentStatus};
use crate::orchestrator::{
    ExperimentRun, InterventionPlan, MonitorPayload, Orchestrator, OrchestratorError, RewardRecord, RunSnapshot,
    TickReport,
};
use crate::sdk::{Ack, Batch};

const EXPERIMENTS_FILE: &str = "experiments.json";
const LOG_DIR: &str = "log";

#[derive(Debug, Error)]
pub enum PlatformError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Open(#[from] OpenError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Trait(#[from] TraitError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error("unknown subject {0}")]
    UnknownSubject(String),
    #[error("experiment store: {0}")]
    Store(String),
}

impl From<io::Error> for PlatformError {
    fn from(e: io::Error) -> Self {
        PlatformError::Store(e.to_string())
    }
}

/// What a device needs from the backend: upload batches, poll nudges.
pub trait PlatformLink {
    fn upload(&mut self, batch: &Batch) -> Result<Ack, PlatformError>;
    /// Hands over and forgets every nudge queued for the device.
    fn poll_nudges(&mut self, device_id: &str) -> Vec<NudgeRecord>;
}

/// The backend state: event log, traits, experiments and per-device nudge
/// queues. With a data directory, the log is segment files under `log/` and
/// experiments are rewritten to `experiments.json` after every change.
#[derive(Debug)]
pub struct Platform {
    log: EventLog,
    registry: TraitRegistry,
    orchestrator: Orchestrator,
    queues: BTreeMap<String, Vec<NudgeRecord>>,
    data_dir: Option<PathBuf>,
}

impl Platform {
    pub fn in_memory() -> Self {
        Platform {
            log: EventLog::in_memory(SchemaCatalog::starter()),
            registry: TraitRegistry::with_builtins(),
            orchestrator: Orchestrator::new(),
            queues: BTreeMap::new(),
            data_dir: None,
        }
    }

    pub fn open(data_dir: &Path, segment_lines: usize) -> Result<Self, PlatformError> {
        fs::create_dir_all(data_dir)?;
        let log = EventLog::open(&data_dir.join(LOG_DIR), SchemaCatalog::starter(), segment_lines)?;
        let registry = TraitRegistry::with_builtins();
        let path = data_dir.join(EXPERIMENTS_FILE);
        let snapshots: Vec<RunSnapshot> = if path.exists() {
            serde_json::from_str(&fs::read_to_string(&path)?).map_err(|e| PlatformError::Store(e.to_string()))?
        } else {
            Vec::new()
        };
        let orchestrator = Orchestrator::restore(snapshots, &log, &registry);
        Ok(Platform {
            log,
            registry,
            orchestrator,
            queues: BTreeMap::new(),
            data_dir: Some(data_dir.to_path_buf()),
        })
    }

    fn persist(&self) -> Result<(), PlatformError> {
        let Some(dir) = &self.data_dir else { return Ok(()) };
        let text = serde_json::to_string_pretty(&self.orchestrator.snapshots()).map_err(|e| PlatformError::Store(e.to_string()))?;
        let tmp = dir.join(format!("{EXPERIMENTS_FILE}.tmp"));
        fs::write(&tmp, text)?;
        fs::rename(tmp, dir.join(EXPERIMENTS_FILE))?;
        Ok(())
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn registry(&self) -> &TraitRegistry {
        &self.registry
    }

    pub fn orchestrator(&self) -> &Orchestrator {
        &self.orchestrator
    }

    pub fn ingest(&mut self, batch: &Batch) -> Result<Ack, PlatformError> {
        Ok(self.log.ingest_batch(batch)?)
    }

    pub fn subject_traits(&self, subject: &SubjectId, as_of_ms: i64) -> Result<Vec<TraitValue>, PlatformError> {
        if !self.log.has_subject(subject) {
            return Err(PlatformError::UnknownSubject(subject.as_str().to_string()));
        }
        Ok(self.registry.compute_all(&self.log, subject, as_of_ms))
    }

    pub fn evaluate_cohort(&self, def: &CohortDefinition, as_of_ms: i64) -> Result<BTreeSet<SubjectId>, PlatformError> {
        Ok(evaluate_cohort(&self.log, &self.registry, def, as_of_ms)?)
    }

    pub fn create_experiment(&mut self, plan: InterventionPlan) -> Result<&ExperimentRun, PlatformError> {
        let id = plan.experiment.experiment_id.clone();
        self.orchestrator.create(plan, &self.registry)?;
        self.persist()?;
        Ok(self.orchestrator.get(&id)?)
    }

    pub fn experiment(&self, id: &str) -> Result<&ExperimentRun, PlatformError> {
        Ok(self.orchestrator.get(id)?)
    }

    pub fn control(&mut self, id: &str, action: ControlAction) -> Result<ExperimentStatus, PlatformError> {
        let status = self.orchestrator.control(id, action)?;
        self.persist()?;
        Ok(status)
    }

    /// Runs the day's tick for every active experiment and queues the
    /// resulting nudges on the subjects' devices.
    pub fn tick(&mut self, day: i64) -> Result<Vec<TickReport>, PlatformError> {
        let outcomes = self.orchestrator.tick_all(&self.log, &self.registry, day)?;
        let mut reports = Vec::with_capacity(outcomes.len());
        for (report, nudges) in outcomes {
            for n in nudges {
                if let Some(dev) = self.log.device_of(&n.subject_id) {
                    self.queues.entry(dev.to_string()).or_default().push(n);
                }
            }
            reports.push(report);
        }
        self.persist()?;
        Ok(reports)
    }

    pub fn attribute_rewards(&mut self, day: i64) -> Result<Vec<RewardRecord>, PlatformError> {
        let out = self.orchestrator.attribute_all(&self.log, day)?;
        if !out.is_empty() {
            self.persist()?;
        }
        Ok(out)
    }

    pub fn queued_nudges(&self, device_id: &str) -> usize {
        self.queues.get(device_id).map_or(0, Vec::len)
    }

    pub fn monitor(&self, id: &str, from_day: i64, to_day: i64) -> Result<MonitorPayload, PlatformError> {
        Ok(self.orchestrator.monitor(id, &self.log, from_day, to_day)?)
    }
}

impl PlatformLink for Platform {
    fn upload(&mut self, batch: &Batch) -> Result<Ack, PlatformError> {
        self.ingest(batch)
    }

    fn poll_nudges(&mut self, device_id: &str) -> Vec<NudgeRecord> {
        self.queues.remove(device_id).unwrap_or_default()
    }
}
