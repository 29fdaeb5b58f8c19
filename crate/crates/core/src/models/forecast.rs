//! Holt's linear exponential smoothing with distribution-free intervals.
//!
//! The smoothing weights are picked from the grid `{0.1, ..., 0.9}^2` by
//! minimum in-sample one-step squared error (first grid point wins ties).
//! Intervals are `point +/- q` where `q` is the empirical quantile of the
//! absolute one-step residuals: the `ceil(level * (m + 1))`-th smallest of
//! `m` residuals, capped at the largest.

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::kvtext::{KvCodec, KvDoc, KvError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub horizon: usize,
    pub point: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
    pub alpha: f64,
    pub beta: f64,
}

struct HoltRun {
    level: f64,
    trend: f64,
    /// One-step errors for t >= 2 (t = 1 is exact by initialization).
    residuals: Vec<f64>,
}

fn run_holt(series: &[f64], alpha: f64, beta: f64) -> HoltRun {
    let mut level = series[0];
    let mut trend = series[1] - series[0];
    let mut residuals = Vec::with_capacity(series.len().saturating_sub(2));
    for (t, &y) in series.iter().enumerate().skip(1) {
        let predicted = level + trend;
        if t >= 2 {
            residuals.push(y - predicted);
        }
        let next_level = alpha * y + (1.0 - alpha) * predicted;
        trend = beta * (next_level - level) + (1.0 - beta) * trend;
        level = next_level;
    }
    HoltRun {
        level,
        trend,
        residuals,
    }
}

pub fn smoothing_grid() -> impl Iterator<Item = (f64, f64)> {
    (1..=9).flat_map(|a| (1..=9).map(move |b| (a as f64 / 10.0, b as f64 / 10.0)))
}

fn residual_quantile(residuals: &[f64], level: f64) -> f64 {
    let mut abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    if abs.is_empty() {
        return 0.0;
    }
    abs.sort_by(f64::total_cmp);
    let m = abs.len();
    let rank = ((level * (m + 1) as f64).ceil() as usize).clamp(1, m);
    abs[rank - 1]
}

pub fn forecast_fit_predict(
    series: &[f64],
    horizon: usize,
    level: f64,
) -> Result<ForecastResult, ModelError> {
    if series.len() < 3 {
        return Err(ModelError::SeriesTooShort(series.len()));
    }
    if horizon < 1 {
        return Err(ModelError::InvalidInput("horizon must be >= 1".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(ModelError::InvalidInput("level must be in (0, 1)".into()));
    }
    if series.iter().any(|y| !y.is_finite()) {
        return Err(ModelError::InvalidInput("non-finite observation".into()));
    }

    let mut best: Option<(f64, f64, f64, HoltRun)> = None;
    for (alpha, beta) in smoothing_grid() {
        let run = run_holt(series, alpha, beta);
        let sse: f64 = run.residuals.iter().map(|e| e * e).sum();
        if best.as_ref().is_none_or(|(s, ..)| sse < *s) {
            best = Some((sse, alpha, beta, run));
        }
    }
    let (_, alpha, beta, run) = best.expect("grid is nonempty");
    let q = residual_quantile(&run.residuals, level);
    let point: Vec<f64> = (1..=horizon)
        .map(|h| run.level + h as f64 * run.trend)
        .collect();
    Ok(ForecastResult {
        horizon,
        lower: point.iter().map(|p| p - q).collect(),
        upper: point.iter().map(|p| p + q).collect(),
        point,
        level,
        alpha,
        beta,
    })
}

impl KvCodec for ForecastResult {
    const KIND: &'static str = "forecast";

    fn to_kv(&self) -> KvDoc {
        let mut d = KvDoc::with_kind(Self::KIND);
        d.set("horizon", self.horizon);
        d.set("level", self.level);
        d.set("alpha", self.alpha);
        d.set("beta", self.beta);
        d.set_list("point", &self.point);
        d.set_list("lower", &self.lower);
        d.set_list("upper", &self.upper);
        d
    }

    fn from_kv(doc: &KvDoc) -> Result<Self, KvError> {
        Ok(ForecastResult {
            horizon: doc.get("horizon")?,
            level: doc.get("level")?,
            alpha: doc.get("alpha")?,
            beta: doc.get("beta")?,
            point: doc.get_list("point")?,
            lower: doc.get_list("lower")?,
            upper: doc.get_list("upper")?,
        })
    }
}
