//! Decision policies: LinUCB, linear Thompson sampling, epsilon-greedy and
//! Whittle-index allocation over two-state restless arms.

mod egreedy;
mod linucb;
mod thompson;
mod whittle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use egreedy::egreedy_choose;
pub use linucb::LinUcbState;
pub use thompson::{TsState, PROPENSITY_DRAWS};
pub use whittle::{allocate_topk, whittle_index, RestlessArmModel, WHITTLE_TOLERANCE};

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_RIDGE: f64 = 1.0;
pub const DEFAULT_NOISE_VARIANCE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BanditError {
    #[error("context has dimension {got}, policy expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("context contains a non-finite entry")]
    NonFinite,
    #[error("no eligible arms")]
    NoEligibleArms,
    #[error("unknown arm {0}")]
    UnknownArm(u32),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("matrix for arm {0} is not positive definite")]
    NotPositiveDefinite(u32),
    #[error("no indifference subsidy in [{low}, {high}] for state {state}")]
    NoIndifference { state: usize, low: f64, high: f64 },
}

/// An arm choice with the policy's probability of having made it.
/// `propensity` is `None` when the policy did not estimate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub arm_id: u32,
    pub propensity: Option<f64>,
    pub context: Vec<f64>,
}

pub(crate) fn check_context(context: &[f64], dim: usize) -> Result<(), BanditError> {
    if context.len() != dim {
        return Err(BanditError::DimensionMismatch {
            expected: dim,
            got: context.len(),
        });
    }
    if context.iter().any(|v| !v.is_finite()) {
        return Err(BanditError::NonFinite);
    }
    Ok(())
}

/// Eligible arms sorted and deduplicated, each checked against `n_arms`.
pub(crate) fn check_eligible(eligible: &[u32], n_arms: usize) -> Result<Vec<u32>, BanditError> {
    let mut arms = eligible.to_vec();
    arms.sort_unstable();
    arms.dedup();
    if arms.is_empty() {
        return Err(BanditError::NoEligibleArms);
    }
    if let Some(&bad) = arms.iter().find(|&&a| a as usize >= n_arms) {
        return Err(BanditError::UnknownArm(bad));
    }
    Ok(arms)
}
