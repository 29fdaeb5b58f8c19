use serde::{Deserialize, Serialize};

use crate::experiment::{ExperimentDef, ExperimentError};
use crate::platform::{MetricDefinition, TraitRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Metric value at the end of the window.
    Level,
    /// Metric change between send time and the end of the window.
    Delta,
    /// 1 opened or viewed, 0 discarded or no reaction, -1 blocked.
    Reaction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub metric: MetricDefinition,
    pub window_days: u32,
    pub mode: RewardMode,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentStrategy {
    /// The arm's `content_ref` as is.
    #[default]
    Static,
    /// The arm's `content_ref` followed by `:` and up to `k` comma-separated
    /// SKUs recommended from the subject's regular items, using a
    /// co-occurrence model fitted on the trailing `lookback_days`.
    PairRecommendation { k: usize, lookback_days: u32 },
}

pub const DEFAULT_FREQUENCY_CAP: u32 = 1;

fn default_cap() -> u32 {
    DEFAULT_FREQUENCY_CAP
}

/// An experiment plus how its nudges are capped, rewarded and filled. The
/// experiment fields sit at the top level, so a bare experiment definition
/// is a valid plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionPlan {
    #[serde(flatten)]
    pub experiment: ExperimentDef,
    /// Defaults to the experiment metric, one cadence window, delta mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardSpec>,
    #[serde(default = "default_cap")]
    pub frequency_cap: u32,
    /// Ordered traits forming the bandit context (after an intercept).
    #[serde(default)]
    pub context_traits: Vec<String>,
    #[serde(default)]
    pub content: ContentStrategy,
}

impl InterventionPlan {
    pub fn new(experiment: ExperimentDef) -> Self {
        InterventionPlan {
            experiment,
            reward: None,
            frequency_cap: DEFAULT_FREQUENCY_CAP,
            context_traits: Vec::new(),
            content: ContentStrategy::Static,
        }
    }

    pub fn reward_spec(&self) -> RewardSpec {
        self.reward.clone().unwrap_or_else(|| RewardSpec {
            metric: self.experiment.metric.clone(),
            window_days: self.experiment.cadence_days,
            mode: RewardMode::Delta,
        })
    }

    pub fn validate(&self, registry: &TraitRegistry) -> Result<(), ExperimentError> {
        self.experiment.validate(registry)?;
        let invalid = |m: &str| Err(ExperimentError::Invalid(m.to_string()));
        if self.frequency_cap < 1 {
            return invalid("frequency_cap must be >= 1");
        }
        if let Some(r) = &self.reward {
            if r.window_days < 1 {
                return invalid("reward window_days must be >= 1");
            }
            r.metric.validate()?;
        }
        for t in &self.context_traits {
            let desc = registry.get(t).map_err(|e| ExperimentError::Invalid(e.to_string()))?;
            if !desc.is_numeric() {
                return invalid("context traits must be numeric");
            }
        }
        if let ContentStrategy::PairRecommendation { k, lookback_days } = self.content {
            if k == 0 || lookback_days == 0 {
                return invalid("pair recommendation needs k >= 1 and lookback_days >= 1");
            }
        }
        Ok(())
    }
}
