use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AssignmentTable, ExperimentError, CONTROL, TREATMENT};
use crate::data_model::SubjectId;

fn check_ratio(ratio: f64) -> Result<(), ExperimentError> {
    if ratio > 0.0 && ratio < 1.0 {
        Ok(())
    } else {
        Err(ExperimentError::InvalidInput(format!("ratio {ratio} not in (0, 1)")))
    }
}

/// Sorted keys, seeded shuffle, the first `round(ratio * n)` (half up) to
/// treatment.
fn split<K: Ord + Clone>(keys: &BTreeSet<K>, ratio: f64, seed: u64) -> BTreeMap<K, usize> {
    let mut order: Vec<&K> = keys.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let treated = (ratio * order.len() as f64 + 0.5).floor() as usize;
    order
        .into_iter()
        .enumerate()
        .map(|(i, k)| (k.clone(), if i < treated { TREATMENT } else { CONTROL }))
        .collect()
}

pub fn assign_fixed(subjects: &BTreeSet<SubjectId>, ratio: f64, seed: u64) -> Result<AssignmentTable, ExperimentError> {
    check_ratio(ratio)?;
    if subjects.is_empty() {
        return Err(ExperimentError::InsufficientData { needed: 1, got: 0 });
    }
    Ok(AssignmentTable {
        subjects: split(subjects, ratio, seed),
        ..Default::default()
    })
}

pub fn assign_cluster(
    subject_clusters: &BTreeMap<SubjectId, String>,
    ratio: f64,
    seed: u64,
) -> Result<AssignmentTable, ExperimentError> {
    check_ratio(ratio)?;
    if subject_clusters.is_empty() {
        return Err(ExperimentError::InsufficientData { needed: 1, got: 0 });
    }
    let ids: BTreeSet<String> = subject_clusters.values().cloned().collect();
    let clusters = split(&ids, ratio, seed);
    Ok(AssignmentTable {
        subjects: subject_clusters.iter().map(|(s, c)| (s.clone(), clusters[c])).collect(),
        clusters,
        pairs: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MicroAction {
    Treat,
    Withhold,
}

/// One Bernoulli(`prob`) draw per (subject, day), in subject then day order.
pub fn schedule_micro(
    subjects: &BTreeSet<SubjectId>,
    decision_points: &[i64],
    prob: f64,
    seed: u64,
) -> Result<BTreeMap<(SubjectId, i64), MicroAction>, ExperimentError> {
    if !(prob > 0.0 && prob <= 1.0) {
        return Err(ExperimentError::InvalidInput(format!("prob {prob} not in (0, 1]")));
    }
    let days: BTreeSet<i64> = decision_points.iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeMap::new();
    for s in subjects {
        for &d in &days {
            let action = if rng.random::<f64>() < prob { MicroAction::Treat } else { MicroAction::Withhold };
            out.insert((s.clone(), d), action);
        }
    }
    Ok(out)
}
