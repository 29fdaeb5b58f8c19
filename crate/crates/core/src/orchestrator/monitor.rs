use serde::{Deserialize, Serialize};

use super::{interaction_days, ExperimentRun, OrchestratorError};
use crate::data_model::day_end_ms;
use crate::experiment::{estimate_daily_diff, DailyEstimate, ExperimentStatus, CONTROL};
use crate::platform::EventLog;

/// The monitor JSON: one estimate per day, days counted from the experiment
/// start. Subjects on any non-control arm form the treatment group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorPayload {
    pub experiment_id: String,
    pub metric: String,
    pub status: ExperimentStatus,
    pub start_day: i64,
    pub from_day: i64,
    pub to_day: i64,
    pub estimates: Vec<DailyEstimate>,
}

pub const MONITOR_LEVEL: f64 = 0.95;

pub(super) fn monitor(run: &ExperimentRun, log: &EventLog, from_day: i64, to_day: i64) -> Result<MonitorPayload, OrchestratorError> {
    let exp = &run.plan.experiment;
    let interactions = interaction_days(log, &exp.experiment_id);
    let subjects: Vec<_> = match run.assignment() {
        Some(t) => t.subjects.keys().cloned().collect(),
        None => run.arm_history.keys().cloned().collect(),
    };
    let mut estimates = Vec::new();
    for rel in from_day.max(0)..=to_day {
        let day = exp.start_day + rel;
        let as_of = day_end_ms(day);
        let (mut t, mut c) = (Vec::new(), Vec::new());
        for s in &subjects {
            let Some(arm) = run.arm_on(s, day) else { continue };
            if let Some(v) = exp.metric.subject_value(log, s, as_of)? {
                if arm == CONTROL { c.push(v) } else { t.push(v) }
            }
        }
        let mut est: DailyEstimate = estimate_daily_diff(rel, &t, &c, MONITOR_LEVEL)?;
        est.interactions = interactions.get(&day).map_or(0, |s| s.len() as u64);
        estimates.push(est);
    }
    Ok(MonitorPayload {
        experiment_id: exp.experiment_id.clone(),
        metric: exp.metric.name.clone(),
        status: exp.status,
        start_day: exp.start_day,
        from_day,
        to_day,
        estimates,
    })
}
