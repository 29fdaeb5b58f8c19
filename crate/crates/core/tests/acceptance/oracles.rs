//! Brute-force references the acceptance checks compare against.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use nudgeforge_core::bandit::RestlessArmModel;

/// Exact values of a stationary policy (`active[s]` true means act in `s`)
/// under a passivity subsidy, from the 2x2 linear system.
fn policy_values(arm: &RestlessArmModel, subsidy: f64, active: [bool; 2]) -> [f64; 2] {
    let row = |s: usize| if active[s] { arm.p_active[s] } else { arm.p_passive[s] };
    let p = Matrix2::new(row(0)[0], row(0)[1], row(1)[0], row(1)[1]);
    let r = Vector2::new(
        if active[0] { 0.0 } else { subsidy },
        1.0 + if active[1] { 0.0 } else { subsidy },
    );
    let v = (Matrix2::identity() - p * arm.beta)
        .lu()
        .solve(&r)
        .expect("discounted system is nonsingular");
    [v[0], v[1]]
}

/// Optimal values by enumerating all four deterministic policies.
fn optimal_values(arm: &RestlessArmModel, subsidy: f64) -> [f64; 2] {
    let mut best = [f64::NEG_INFINITY; 2];
    for mask in 0..4u8 {
        let v = policy_values(arm, subsidy, [mask & 1 == 1, mask & 2 == 2]);
        best[0] = best[0].max(v[0]);
        best[1] = best[1].max(v[1]);
    }
    best
}

/// Q(active) - Q(passive) in `state` at `subsidy`.
pub fn action_gap(arm: &RestlessArmModel, state: usize, subsidy: f64) -> f64 {
    let v = optimal_values(arm, subsidy);
    let next = |p: [f64; 2]| p[0] * v[0] + p[1] * v[1];
    let r = state as f64;
    (r + arm.beta * next(arm.p_active[state])) - (r + subsidy + arm.beta * next(arm.p_passive[state]))
}

const GRID_STEPS: usize = 20_000;
const RANGE: (f64, f64) = (-10.0, 10.0);

/// The indifference subsidy for `state`, found by a grid scan for the single
/// sign change followed by bisection. `None` when the gap does not cross
/// zero exactly once on the range (no index, or not indexable).
pub fn oracle_index(arm: &RestlessArmModel, state: usize) -> Option<f64> {
    let step = (RANGE.1 - RANGE.0) / GRID_STEPS as f64;
    let grid: Vec<(f64, f64)> = (0..=GRID_STEPS)
        .map(|i| {
            let x = RANGE.0 + i as f64 * step;
            (x, action_gap(arm, state, x))
        })
        .collect();
    let crossings: Vec<usize> = (0..GRID_STEPS)
        .filter(|&i| (grid[i].1 > 0.0) != (grid[i + 1].1 > 0.0))
        .collect();
    if crossings.len() != 1 || grid[crossings[0]].1 <= 0.0 {
        return None;
    }
    let (mut lo, mut hi) = (grid[crossings[0]].0, grid[crossings[0] + 1].0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if action_gap(arm, state, mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Joint MDP over `arms` where exactly `k` arms act each step. Returns the
/// optimal value per joint state (bit `i` is arm `i`'s state).
pub fn joint_optimum(arms: &[RestlessArmModel], k: usize) -> Vec<f64> {
    let n = arms.len();
    let states = 1usize << n;
    let actions: Vec<usize> = (0..states).filter(|a| a.count_ones() as usize == k).collect();
    let beta = arms[0].beta;
    let mut v = vec![0.0; states];
    loop {
        let next: Vec<f64> = (0..states)
            .map(|s| {
                actions
                    .iter()
                    .map(|&a| reward(s) + beta * expected(arms, s, a, &v))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if delta * beta / (1.0 - beta) <= 1e-10 {
            return v;
        }
    }
}

/// Exact values of a joint policy `choose(state) -> action mask`.
pub fn joint_policy_values(arms: &[RestlessArmModel], choose: impl Fn(usize) -> usize) -> Vec<f64> {
    let states = 1usize << arms.len();
    let beta = arms[0].beta;
    let mut m = DMatrix::identity(states, states);
    let mut r = DVector::zeros(states);
    for s in 0..states {
        let a = choose(s);
        r[s] = reward(s);
        for t in 0..states {
            m[(s, t)] -= beta * transition(arms, s, a, t);
        }
    }
    let v = m.lu().solve(&r).expect("discounted system is nonsingular");
    v.iter().copied().collect()
}

fn reward(s: usize) -> f64 {
    s.count_ones() as f64
}

fn transition(arms: &[RestlessArmModel], s: usize, a: usize, t: usize) -> f64 {
    arms.iter()
        .enumerate()
        .map(|(i, arm)| {
            let from = (s >> i) & 1;
            let to = (t >> i) & 1;
            let p = if (a >> i) & 1 == 1 { arm.p_active[from] } else { arm.p_passive[from] };
            p[to]
        })
        .product()
}

fn expected(arms: &[RestlessArmModel], s: usize, a: usize, v: &[f64]) -> f64 {
    (0..v.len()).map(|t| transition(arms, s, a, t) * v[t]).sum()
}

/// Minimum-total-distance perfect matching by enumeration, on z-scored
/// covariates (population variance; constant dimensions dropped).
pub fn brute_force_pairs(rows: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let n = rows.len();
    let dim = rows[0].len();
    let mut cols = Vec::new();
    for j in 0..dim {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64;
        if var > 0.0 {
            cols.push((j, mean, var.sqrt()));
        }
    }
    let z: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| cols.iter().map(|&(j, m, sd)| (r[j] - m) / sd).collect())
        .collect();
    let dist = |a: usize, b: usize| {
        z[a].iter()
            .zip(&z[b])
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut all = Vec::new();
    enumerate((0..n).collect(), Vec::new(), &mut all);
    all.into_iter()
        .map(|p| (p.iter().map(|&(a, b)| dist(a, b)).sum::<f64>(), p))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, p)| p)
        .unwrap_or_default()
}

fn enumerate(rest: Vec<usize>, cur: Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
    if rest.is_empty() {
        out.push(cur);
        return;
    }
    let first = rest[0];
    for j in 1..rest.len() {
        let mut next_rest = rest.clone();
        let partner = next_rest.remove(j);
        next_rest.remove(0);
        let mut next = cur.clone();
        next.push((first, partner));
        enumerate(next_rest, next, out);
    }
}
