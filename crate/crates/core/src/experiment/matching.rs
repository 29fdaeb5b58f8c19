use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AssignmentTable, ExperimentError, CONTROL, TREATMENT};

/// Largest cluster count paired by exhaustive search; above it pairing is
/// greedy.
pub const EXACT_MATCH_LIMIT: usize = 10;

/// Per-dimension z-scores with population variance; constant dimensions are
/// dropped.
fn standardize(rows: &[&Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len() as f64;
    let dim = rows[0].len();
    let mut keep = Vec::new();
    for j in 0..dim {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        if var > 1e-24 * mean.abs().max(1.0).powi(2) {
            keep.push((j, mean, var.sqrt()));
        }
    }
    rows.iter()
        .map(|r| keep.iter().map(|&(j, m, sd)| (r[j] - m) / sd).collect())
        .collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Exhaustive search over perfect matchings. Candidates are generated in
/// lexicographic order and only a strictly smaller total replaces the best,
/// so ties resolve to the lexicographically smallest pairing.
fn exact_pairs(d: &[Vec<f64>]) -> Vec<(usize, usize)> {
    fn go(d: &[Vec<f64>], used: &mut [bool], cur: &mut Vec<(usize, usize)>, cost: f64, best: &mut (f64, Vec<(usize, usize)>)) {
        let Some(i) = used.iter().position(|u| !u) else {
            if cost < best.0 {
                *best = (cost, cur.clone());
            }
            return;
        };
        used[i] = true;
        for j in i + 1..used.len() {
            if used[j] {
                continue;
            }
            used[j] = true;
            cur.push((i, j));
            go(d, used, cur, cost + d[i][j], best);
            cur.pop();
            used[j] = false;
        }
        used[i] = false;
    }
    let mut best = (f64::INFINITY, Vec::new());
    go(d, &mut vec![false; d.len()], &mut Vec::new(), 0.0, &mut best);
    best.1
}

/// Each unpaired cluster in id order takes its nearest unpaired neighbour
/// (lowest id on ties).
fn greedy_pairs(d: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let n = d.len();
    let mut used = vec![false; n];
    let mut pairs = Vec::with_capacity(n / 2);
    for i in 0..n {
        if used[i] {
            continue;
        }
        used[i] = true;
        let mut best: Option<usize> = None;
        for j in (0..n).filter(|&j| !used[j]) {
            if best.is_none_or(|b| d[i][j] < d[i][b]) {
                best = Some(j);
            }
        }
        let j = best.expect("even count leaves a partner");
        used[j] = true;
        pairs.push((i, j));
    }
    pairs
}

/// Pairs clusters with similar covariates, then sends one member of each pair
/// to treatment by a seeded fair coin.
pub fn pairwise_match(
    cluster_covariates: &BTreeMap<String, Vec<f64>>,
    seed: u64,
) -> Result<(Vec<(String, String)>, AssignmentTable), ExperimentError> {
    let n = cluster_covariates.len();
    if n % 2 == 1 {
        return Err(ExperimentError::OddClusterCount(n));
    }
    if n == 0 {
        return Err(ExperimentError::InsufficientData { needed: 2, got: 0 });
    }
    let ids: Vec<&String> = cluster_covariates.keys().collect();
    let rows: Vec<&Vec<f64>> = cluster_covariates.values().collect();
    let dim = rows[0].len();
    if rows.iter().any(|r| r.len() != dim) {
        return Err(ExperimentError::InvalidInput("covariate vectors differ in length".into()));
    }
    if rows.iter().flat_map(|r| r.iter()).any(|v| !v.is_finite()) {
        return Err(ExperimentError::InvalidInput("non-finite covariate".into()));
    }
    let z = standardize(&rows);
    let d: Vec<Vec<f64>> = z.iter().map(|a| z.iter().map(|b| distance(a, b)).collect()).collect();
    let index_pairs = if n <= EXACT_MATCH_LIMIT { exact_pairs(&d) } else { greedy_pairs(&d) };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = AssignmentTable::default();
    let mut pairs = Vec::with_capacity(index_pairs.len());
    for (i, j) in index_pairs {
        let (a, b) = (ids[i].clone(), ids[j].clone());
        let first_treated = rng.random_bool(0.5);
        table.clusters.insert(a.clone(), if first_treated { TREATMENT } else { CONTROL });
        table.clusters.insert(b.clone(), if first_treated { CONTROL } else { TREATMENT });
        pairs.push((a, b));
    }
    table.pairs = pairs.clone();
    Ok((pairs, table))
}
