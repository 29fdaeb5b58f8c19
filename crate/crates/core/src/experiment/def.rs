use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_model::{validate_token, SubjectId, TokenError};
use crate::platform::{CohortDefinition, CohortError, MetricDefinition, MetricError, TraitRegistry};

/// Index into [`ExperimentDef::arms`] of the control arm in two-arm designs.
pub const CONTROL: usize = 0;
/// Index into [`ExperimentDef::arms`] of the treatment arm in two-arm designs.
pub const TREATMENT: usize = 1;
pub const DEFAULT_CADENCE_DAYS: u32 = 7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error(transparent)]
    Token(#[from] TokenError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("pairwise matching needs an even number of clusters, got {0}")]
    OddClusterCount(usize),
    #[error("need at least {needed} items, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmSpec {
    pub arm_id: u32,
    pub content_ref: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    Linucb,
    Thompson,
    Egreedy { epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Design {
    FixedAb {
        ratio: f64,
    },
    /// Whole clusters (subjects sharing a value of `cluster_trait`) are
    /// randomized. With `match_on` traits, clusters are first paired on the
    /// cluster means of those traits.
    ClusterAb {
        cluster_trait: String,
        #[serde(default = "half")]
        ratio: f64,
        #[serde(default)]
        match_on: Vec<String>,
    },
    /// Days are offsets from the experiment start.
    MicroRandomized {
        prob: f64,
        decision_points: Vec<i64>,
    },
    Adaptive {
        policy: PolicyKind,
    },
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentStatus {
    #[default]
    Draft,
    Running,
    Paused,
    Stopped,
}

impl ExperimentStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentStatus::Draft => "draft",
            ExperimentStatus::Running => "running",
            ExperimentStatus::Paused => "paused",
            ExperimentStatus::Stopped => "stopped",
        }
    }

    /// Resuming a draft starts it. Stop is accepted from every non-stopped
    /// state; everything else must follow running/paused.
    pub fn apply(self, action: ControlAction) -> Result<Self, IllegalStatusChange> {
        use ControlAction as A;
        use ExperimentStatus as S;
        let next = match (self, action) {
            (S::Draft, A::Start | A::Resume) => S::Running,
            (S::Running, A::Pause) => S::Paused,
            (S::Paused, A::Resume) => S::Running,
            (S::Draft | S::Running | S::Paused, A::Stop) => S::Stopped,
            _ => return Err(IllegalStatusChange { from: self, action }),
        };
        Ok(next)
    }
}

impl fmt::Display for ExperimentStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlAction {
    Start,
    Pause,
    Resume,
    Stop,
}

impl std::str::FromStr for ControlAction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "start" => Ok(ControlAction::Start),
            "pause" => Ok(ControlAction::Pause),
            "resume" => Ok(ControlAction::Resume),
            "stop" => Ok(ControlAction::Stop),
            other => Err(format!("unknown action {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("cannot {action:?} an experiment that is {from}")]
pub struct IllegalStatusChange {
    pub from: ExperimentStatus,
    pub action: ControlAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentDef {
    pub experiment_id: String,
    pub cohort: CohortDefinition,
    pub arms: Vec<ArmSpec>,
    pub design: Design,
    pub metric: MetricDefinition,
    #[serde(default = "default_cadence")]
    pub cadence_days: u32,
    pub start_day: i64,
    pub end_day: i64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub status: ExperimentStatus,
}

fn default_cadence() -> u32 {
    DEFAULT_CADENCE_DAYS
}

impl ExperimentDef {
    pub fn validate(&self, registry: &TraitRegistry) -> Result<(), ExperimentError> {
        let invalid = |m: String| Err(ExperimentError::Invalid(m));
        validate_token("experiment_id", &self.experiment_id)?;
        self.cohort.validate(registry)?;
        self.metric.validate()?;
        let ids: BTreeSet<u32> = self.arms.iter().map(|a| a.arm_id).collect();
        if ids.len() != self.arms.len() {
            return invalid("duplicate arm_id".into());
        }
        for arm in &self.arms {
            validate_token("content_ref", &arm.content_ref)?;
        }
        if self.arms.len() < 2 {
            return invalid("at least two arms are required".into());
        }
        if self.cadence_days < 1 {
            return invalid("cadence_days must be >= 1".into());
        }
        if self.start_day > self.end_day {
            return invalid("start_day is after end_day".into());
        }
        match &self.design {
            Design::FixedAb { ratio } | Design::ClusterAb { ratio, .. } if !(*ratio > 0.0 && *ratio < 1.0) => {
                return invalid(format!("ratio {ratio} not in (0, 1)"));
            }
            Design::ClusterAb { cluster_trait, match_on, .. } => {
                registry.get(cluster_trait).map_err(|e| ExperimentError::Invalid(e.to_string()))?;
                for t in match_on {
                    let desc = registry.get(t).map_err(|e| ExperimentError::Invalid(e.to_string()))?;
                    if !desc.is_numeric() {
                        return invalid(format!("matching trait {t} is not numeric"));
                    }
                }
            }
            Design::MicroRandomized { prob, decision_points } => {
                if !(*prob > 0.0 && *prob <= 1.0) {
                    return invalid(format!("prob {prob} not in (0, 1]"));
                }
                if decision_points.iter().any(|&d| d < 0 || d > self.end_day - self.start_day) {
                    return invalid("decision point outside the experiment window".into());
                }
            }
            Design::Adaptive { policy: PolicyKind::Egreedy { epsilon } } if !(0.0..=1.0).contains(epsilon) => {
                return invalid(format!("epsilon {epsilon} not in [0, 1]"));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(self.design, Design::Adaptive { .. })
    }
}

/// Arm per subject, given as an index into the experiment's arm list. Cluster
/// designs also record the arm per cluster and the matched pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentTable {
    pub subjects: BTreeMap<SubjectId, usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub clusters: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairs: Vec<(String, String)>,
}

impl AssignmentTable {
    pub fn arm_of(&self, subject: &SubjectId) -> Option<usize> {
        self.subjects.get(subject).copied()
    }

    pub fn count(&self, arm: usize) -> usize {
        self.subjects.values().filter(|&&a| a == arm).count()
    }
}
