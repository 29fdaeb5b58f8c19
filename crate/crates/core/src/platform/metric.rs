use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data_model::{SubjectId, TraitScalar};

use super::log::EventLog;
use super::traits::{compute_trait, TraitDescriptor, TraitError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Mean,
    Sum,
    Count,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricDefinition {
    pub name: String,
    #[serde(rename = "trait")]
    pub trait_desc: TraitDescriptor,
    pub aggregation: Aggregation,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("mean over an empty group")]
    EmptyGroup,
    #[error("metric `{0}` aggregates a non-numeric trait")]
    NonNumeric(String),
    #[error(transparent)]
    Trait(#[from] TraitError),
}

impl MetricDefinition {
    /// Mean weekly purchased variety: the pharmacy experiment's success metric.
    pub fn weekly_variety_mean() -> Self {
        MetricDefinition {
            name: "weekly_purchased_variety".into(),
            trait_desc: TraitDescriptor::weekly_purchased_variety(),
            aggregation: Aggregation::Mean,
        }
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        self.trait_desc.validate()?;
        if self.aggregation != Aggregation::Count && !self.trait_desc.is_numeric() {
            return Err(MetricError::NonNumeric(self.name.clone()));
        }
        Ok(())
    }

    /// One subject's numeric value, `None` when the trait is missing.
    pub fn subject_value(
        &self,
        log: &EventLog,
        subject: &SubjectId,
        as_of_ms: i64,
    ) -> Result<Option<f64>, MetricError> {
        let v = compute_trait(log, subject, &self.trait_desc, as_of_ms)?.value;
        match v {
            TraitScalar::Missing => Ok(None),
            other => other
                .as_num()
                .map(Some)
                .ok_or_else(|| MetricError::NonNumeric(self.name.clone())),
        }
    }
}

/// Aggregates the metric's trait over `subjects` at `as_of_ms`. Subjects whose
/// trait is missing are left out of mean and sum.
pub fn query_metric(
    log: &EventLog,
    metric: &MetricDefinition,
    subjects: &BTreeSet<SubjectId>,
    as_of_ms: i64,
) -> Result<f64, MetricError> {
    metric.validate()?;
    if metric.aggregation == Aggregation::Count {
        return Ok(subjects.len() as f64);
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for s in subjects {
        if let Some(v) = metric.subject_value(log, s, as_of_ms)? {
            sum += v;
            n += 1;
        }
    }
    match metric.aggregation {
        Aggregation::Sum => Ok(sum),
        Aggregation::Mean if n == 0 => Err(MetricError::EmptyGroup),
        _ => Ok(sum / n as f64),
    }
}
