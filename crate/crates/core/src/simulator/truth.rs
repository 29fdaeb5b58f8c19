//! Counterfactual bookkeeping: what each pharmacy ordered with and without
//! the nudges it actually received.

use std::collections::BTreeSet;
use std::fmt::Write;

use crate::data_model::SubjectId;

/// Trailing window of the purchased-variety metric, in days.
pub const VARIETY_WINDOW_DAYS: i64 = 7;

/// One pharmacy-day in both branches. SKUs are catalog indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DayTruth {
    pub with: BTreeSet<u32>,
    pub without: BTreeSet<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub start_day: i64,
    pub subjects: Vec<SubjectId>,
    /// Set once the experiment has assigned its arms.
    pub treated: Vec<bool>,
    /// Indexed by pharmacy, then absolute day.
    pub days: Vec<Vec<DayTruth>>,
    /// Events each device logged, for conservation checks.
    pub generated_events: Vec<u64>,
}

impl GroundTruth {
    pub fn new(subjects: Vec<SubjectId>, start_day: i64) -> Self {
        let n = subjects.len();
        GroundTruth {
            start_day,
            subjects,
            treated: vec![false; n],
            days: vec![Vec::new(); n],
            generated_events: vec![0; n],
        }
    }

    /// Distinct SKUs over the window ending on `day` (absolute).
    pub fn variety(&self, pharmacy: usize, day: i64, with_exposure: bool) -> usize {
        let rows = &self.days[pharmacy];
        let lo = (day - VARIETY_WINDOW_DAYS + 1).max(0);
        let mut seen: BTreeSet<u32> = BTreeSet::new();
        for d in lo..=day {
            if let Some(t) = rows.get(d as usize) {
                seen.extend(if with_exposure { &t.with } else { &t.without });
            }
        }
        seen.len()
    }

    /// Mean over treated pharmacies of the variety gap between the branches on
    /// experiment day `day`; zero when nobody is treated.
    pub fn true_effect(&self, day: i64) -> f64 {
        let abs = self.start_day + day;
        let gaps: Vec<f64> = (0..self.subjects.len())
            .filter(|&p| self.treated[p])
            .map(|p| self.variety(p, abs, true) as f64 - self.variety(p, abs, false) as f64)
            .collect();
        if gaps.is_empty() {
            0.0
        } else {
            gaps.iter().sum::<f64>() / gaps.len() as f64
        }
    }

    pub fn total_generated(&self) -> u64 {
        self.generated_events.iter().sum()
    }

    /// One row per pharmacy-day: `subject_id,day,treated,with,without` where
    /// day is relative to the experiment start and SKU lists are `;`-joined.
    pub fn to_csv(&self, sku_name: impl Fn(u32) -> String) -> String {
        let mut out = String::from("subject_id,day,treated,with,without\n");
        let join = |s: &BTreeSet<u32>| s.iter().map(|&i| sku_name(i)).collect::<Vec<_>>().join(";");
        for (p, rows) in self.days.iter().enumerate() {
            for (d, t) in rows.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    self.subjects[p],
                    d as i64 - self.start_day,
                    self.treated[p],
                    join(&t.with),
                    join(&t.without)
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth() -> GroundTruth {
        let subjects = vec![SubjectId::new("pharmacy-a").unwrap(), SubjectId::new("pharmacy-b").unwrap()];
        let mut t = GroundTruth::new(subjects, 1);
        let day = |w: &[u32], wo: &[u32]| DayTruth {
            with: w.iter().copied().collect(),
            without: wo.iter().copied().collect(),
        };
        t.days[0] = vec![day(&[1], &[1]), day(&[1, 2, 3], &[1]), day(&[4], &[])];
        t.days[1] = vec![day(&[5], &[5]), day(&[6], &[6]), day(&[], &[])];
        t.treated = vec![true, false];
        t
    }

    #[test]
    fn variety_counts_distinct_skus_in_window() {
        let t = truth();
        assert_eq!(t.variety(0, 2, true), 4);
        assert_eq!(t.variety(0, 2, false), 1);
        assert_eq!(t.variety(1, 2, true), 2);
    }

    #[test]
    fn effect_averages_treated_only() {
        let t = truth();
        assert_eq!(t.true_effect(0), 2.0);
        assert_eq!(t.true_effect(1), 3.0);
        let mut none = t.clone();
        none.treated = vec![false, false];
        assert_eq!(none.true_effect(1), 0.0);
    }

    #[test]
    fn csv_has_a_row_per_pharmacy_day() {
        let csv = truth().to_csv(|i| format!("S{i}"));
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.contains("pharmacy-a,0,true,S1;S2;S3,S1\n"));
    }
}
