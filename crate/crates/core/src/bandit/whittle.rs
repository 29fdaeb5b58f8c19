use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::BanditError;

/// Accuracy of [`whittle_index`]. Value iteration and the bisection are both
/// run well below it so the returned subsidy is reliable to this bound.
pub const WHITTLE_TOLERANCE: f64 = 1e-6;
const VALUE_TOLERANCE: f64 = 1e-11;
const BISECTION_WIDTH: f64 = 1e-10;
const SUBSIDY_RANGE: (f64, f64) = (-10.0, 10.0);
const MAX_SWEEPS: usize = 1_000_000;

/// Two-state arm: state 0 is disengaged, state 1 engaged, reward equals the
/// state. Rows of both transition matrices are distributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestlessArmModel {
    pub p_active: [[f64; 2]; 2],
    pub p_passive: [[f64; 2]; 2],
    pub beta: f64,
}

impl RestlessArmModel {
    pub const DEFAULT_BETA: f64 = 0.95;

    pub fn validate(&self) -> Result<(), BanditError> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(BanditError::InvalidParameter(format!("discount {} not in (0, 1)", self.beta)));
        }
        for row in self.p_active.iter().chain(&self.p_passive) {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (row[0] + row[1] - 1.0).abs() > 1e-9 {
                return Err(BanditError::InvalidParameter(format!("row {row:?} is not a distribution")));
            }
        }
        Ok(())
    }

    fn q_values(&self, v: [f64; 2], subsidy: f64, s: usize) -> (f64, f64) {
        let r = s as f64;
        let next = |p: &[f64; 2]| p[0] * v[0] + p[1] * v[1];
        let active = r + self.beta * next(&self.p_active[s]);
        let passive = r + subsidy + self.beta * next(&self.p_passive[s]);
        (active, passive)
    }

    /// Optimal values under a passivity subsidy.
    pub fn optimal_values(&self, subsidy: f64) -> [f64; 2] {
        let mut v = [0.0; 2];
        let bound = self.beta / (1.0 - self.beta);
        for _ in 0..MAX_SWEEPS {
            let mut next = [0.0; 2];
            for (s, slot) in next.iter_mut().enumerate() {
                let (a, p) = self.q_values(v, subsidy, s);
                *slot = a.max(p);
            }
            let delta = (next[0] - v[0]).abs().max((next[1] - v[1]).abs());
            v = next;
            if delta * bound <= VALUE_TOLERANCE {
                break;
            }
        }
        v
    }

    /// Advantage of acting over resting in `state` under `subsidy`.
    pub fn action_gap(&self, state: usize, subsidy: f64) -> f64 {
        let (a, p) = self.q_values(self.optimal_values(subsidy), subsidy, state);
        a - p
    }
}

/// The passivity subsidy making both actions equally good in `state`.
pub fn whittle_index(arm: &RestlessArmModel, state: usize) -> Result<f64, BanditError> {
    arm.validate()?;
    if state > 1 {
        return Err(BanditError::InvalidParameter(format!("state {state} not in {{0, 1}}")));
    }
    let (mut lo, mut hi) = SUBSIDY_RANGE;
    let no_bracket = BanditError::NoIndifference { state, low: lo, high: hi };
    let g_lo = arm.action_gap(state, lo);
    let g_hi = arm.action_gap(state, hi);
    if g_lo == 0.0 {
        return Ok(lo);
    }
    if g_hi == 0.0 {
        return Ok(hi);
    }
    if g_lo < 0.0 || g_hi > 0.0 {
        return Err(no_bracket);
    }
    while hi - lo > BISECTION_WIDTH {
        let mid = 0.5 * (lo + hi);
        let g = arm.action_gap(state, mid);
        if g == 0.0 {
            return Ok(mid);
        }
        if g > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The `min(k, n)` arms with the highest index, lowest id first on ties.
pub fn allocate_topk(indices: &BTreeMap<u32, f64>, k: usize) -> BTreeSet<u32> {
    let mut ranked: Vec<(u32, f64)> = indices.iter().map(|(&a, &i)| (a, i)).collect();
    ranked.sort_by(|(a, x), (b, y)| y.total_cmp(x).then(a.cmp(b)));
    ranked.into_iter().take(k).map(|(a, _)| a).collect()
}
