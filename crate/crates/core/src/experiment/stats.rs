use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::ExperimentError;

/// Treatment minus control on one day. The interval is absent when either
/// group has fewer than two values; `diff` is absent when either is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyEstimate {
    pub day: i64,
    pub diff: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n_t: usize,
    pub n_c: usize,
    pub interactions: u64,
    pub insufficient: bool,
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Welch two-sample interval at `level` with Welch-Satterthwaite degrees of
/// freedom.
pub fn estimate_daily_diff(day: i64, t_values: &[f64], c_values: &[f64], level: f64) -> Result<DailyEstimate, ExperimentError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(ExperimentError::InvalidInput(format!("level {level} not in (0, 1)")));
    }
    if t_values.iter().chain(c_values).any(|v| !v.is_finite()) {
        return Err(ExperimentError::InvalidInput("non-finite value".into()));
    }
    let (n_t, n_c) = (t_values.len(), c_values.len());
    let mut est = DailyEstimate {
        day,
        diff: None,
        ci_low: None,
        ci_high: None,
        n_t,
        n_c,
        interactions: 0,
        insufficient: n_t < 2 || n_c < 2,
    };
    if n_t == 0 || n_c == 0 {
        return Ok(est);
    }
    let (mt, vt) = mean_var(t_values);
    let (mc, vc) = mean_var(c_values);
    let diff = mt - mc;
    est.diff = Some(diff);
    if est.insufficient {
        return Ok(est);
    }
    let (at, ac) = (vt / n_t as f64, vc / n_c as f64);
    let se2 = at + ac;
    let half = if se2 == 0.0 {
        0.0
    } else {
        let df = se2 * se2 / (at * at / (n_t as f64 - 1.0) + ac * ac / (n_c as f64 - 1.0));
        let t = StudentsT::new(0.0, 1.0, df)
            .map_err(|e| ExperimentError::InvalidInput(e.to_string()))?
            .inverse_cdf(1.0 - (1.0 - level) / 2.0);
        t * se2.sqrt()
    };
    est.ci_low = Some(diff - half);
    est.ci_high = Some(diff + half);
    Ok(est)
}

/// True iff the interval exists and excludes zero.
pub fn flag_significance(est: &DailyEstimate) -> bool {
    match (est.ci_low, est.ci_high) {
        (Some(lo), Some(hi)) => !(lo <= 0.0 && 0.0 <= hi),
        _ => false,
    }
}

/// Least-squares slope of `diff` against `day` over estimates that have one.
pub fn effect_trend(estimates: &[DailyEstimate]) -> Result<f64, ExperimentError> {
    let pts: Vec<(f64, f64)> = estimates
        .iter()
        .filter_map(|e| e.diff.map(|d| (e.day as f64, d)))
        .collect();
    if pts.len() < 3 {
        return Err(ExperimentError::InsufficientData { needed: 3, got: pts.len() });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(ExperimentError::InvalidInput("all estimates share one day".into()));
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn with_ci(lo: f64, hi: f64) -> DailyEstimate {
        DailyEstimate { day: 0, diff: Some((lo + hi) / 2.0), ci_low: Some(lo), ci_high: Some(hi), n_t: 3, n_c: 3, interactions: 0, insufficient: false }
    }

    #[test]
    fn welch_worked_example() {
        let e = estimate_daily_diff(3, &[10.0, 12.0, 14.0], &[9.0, 11.0, 13.0], 0.95).unwrap();
        assert_eq!(e.diff, Some(1.0));
        assert!((e.ci_low.unwrap() + 3.53).abs() <= 0.01);
        assert!((e.ci_high.unwrap() - 5.53).abs() <= 0.01);
        assert!(!flag_significance(&e));
    }

    #[test]
    fn zero_variance_and_small_groups() {
        let e = estimate_daily_diff(0, &[3.0; 3], &[3.0; 3], 0.95).unwrap();
        assert_eq!((e.ci_low, e.ci_high), (Some(0.0), Some(0.0)));
        assert!(!flag_significance(&e));
        let e = estimate_daily_diff(0, &[4.0; 3], &[3.0; 3], 0.95).unwrap();
        assert!(flag_significance(&e));
        let e = estimate_daily_diff(0, &[4.0], &[3.0, 5.0], 0.95).unwrap();
        assert!(e.insufficient);
        assert_eq!(e.diff, Some(0.0));
        assert_eq!(e.ci_low, None);
        assert!(!flag_significance(&e));
        let e = estimate_daily_diff(0, &[], &[3.0, 5.0], 0.95).unwrap();
        assert_eq!(e.diff, None);
    }

    #[test]
    fn significance_rule() {
        assert!(flag_significance(&with_ci(2.1, 7.9)));
        assert!(!flag_significance(&with_ci(-3.53, 5.53)));
        assert!(!flag_significance(&with_ci(0.0, 0.0)));
        assert!(!flag_significance(&with_ci(0.0, 1.0)));
    }

    #[test]
    fn trend_examples() {
        let mk = |d: &[f64]| d.iter().enumerate().map(|(i, &x)| DailyEstimate { day: i as i64 + 1, ..with_ci(x, x) }).collect::<Vec<_>>();
        assert!((effect_trend(&mk(&[5.0, 4.0, 3.0, 2.0])).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(effect_trend(&mk(&[2.0, 2.0, 2.0])).unwrap(), 0.0);
        assert!(effect_trend(&mk(&[2.0, 2.0])).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let est: Vec<DailyEstimate> = (0..60)
            .map(|d| {
                let y = 6.0 - 0.3 * d as f64 + noise.sample(&mut rng);
                DailyEstimate { day: d, ..with_ci(y, y) }
            })
            .collect();
        assert!((effect_trend(&est).unwrap() + 0.3).abs() <= 0.1);
    }

    #[test]
    fn null_coverage() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = Normal::new(10.0, 3.0).unwrap();
        let days = 10_000;
        let covered = (0..days)
            .filter(|&d| {
                let t: Vec<f64> = (0..20).map(|_| g.sample(&mut rng)).collect();
                let c: Vec<f64> = (0..25).map(|_| g.sample(&mut rng)).collect();
                !flag_significance(&estimate_daily_diff(d, &t, &c, 0.95).unwrap())
            })
            .count();
        let frac = covered as f64 / days as f64;
        assert!((0.94..=0.96).contains(&frac), "{frac}");
    }

    proptest! {
        #[test]
        fn interval_is_symmetric_and_flag_is_exclusion(
            t in proptest::collection::vec(-20.0f64..20.0, 2..15),
            c in proptest::collection::vec(-20.0f64..20.0, 2..15),
        ) {
            let e = estimate_daily_diff(0, &t, &c, 0.95).unwrap();
            let (d, lo, hi) = (e.diff.unwrap(), e.ci_low.unwrap(), e.ci_high.unwrap());
            prop_assert!(lo <= d && d <= hi);
            prop_assert!(((d - lo) - (hi - d)).abs() <= 1e-9 * (1.0 + d.abs()));
            prop_assert_eq!(flag_significance(&e), lo > 0.0 || hi < 0.0);
        }
    }
}
