use std::collections::BTreeMap;

use rand::Rng;

use super::{BanditError, Decision};

/// With probability `epsilon` picks uniformly, otherwise the best mean
/// (lowest arm on ties). One uniform is always drawn for the coin, and a
/// second only when exploring.
pub fn egreedy_choose<R: Rng + ?Sized>(
    mean_rewards: &BTreeMap<u32, f64>,
    epsilon: f64,
    rng: &mut R,
) -> Result<Decision, BanditError> {
    if mean_rewards.is_empty() {
        return Err(BanditError::NoEligibleArms);
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(BanditError::InvalidParameter(format!("epsilon {epsilon} not in [0, 1]")));
    }
    if mean_rewards.values().any(|v| !v.is_finite()) {
        return Err(BanditError::NonFinite);
    }
    let mut greedy = None;
    for (&arm, &m) in mean_rewards {
        if greedy.is_none_or(|(_, best)| m > best) {
            greedy = Some((arm, m));
        }
    }
    let (greedy, _) = greedy.expect("nonempty");
    let n = mean_rewards.len();
    let explore = rng.random::<f64>() < epsilon;
    let arm_id = if explore {
        *mean_rewards.keys().nth(rng.random_range(0..n)).expect("index in range")
    } else {
        greedy
    };
    let uniform = epsilon / n as f64;
    let propensity = if arm_id == greedy { 1.0 - epsilon + uniform } else { uniform };
    Ok(Decision {
        arm_id,
        propensity: Some(propensity),
        context: Vec::new(),
    })
}
