use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::kvtext::{KvCodec, KvDoc, KvError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalObservation {
    /// Days until the event or censoring; must be positive.
    pub duration: f64,
    /// `false` means right-censored.
    pub event_observed: bool,
}

impl SurvivalObservation {
    pub fn event(duration: f64) -> Self {
        SurvivalObservation {
            duration,
            event_observed: true,
        }
    }

    pub fn censored(duration: f64) -> Self {
        SurvivalObservation {
            duration,
            event_observed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    /// Distinct event times, strictly increasing.
    pub times: Vec<f64>,
    /// Survival just after each event time.
    pub survival: Vec<f64>,
    pub at_risk: Vec<u64>,
    pub events: Vec<u64>,
}

impl SurvivalCurve {
    /// S(t) as a right-continuous step function.
    pub fn survival_at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x <= t);
        if k == 0 {
            1.0
        } else {
            self.survival[k - 1]
        }
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Running product of `(n - d) / n` factors, kept as an exact fraction while it
/// fits so that the reported survival is the correctly rounded product.
struct Product {
    exact: Option<(u128, u128)>,
    float: f64,
}

impl Product {
    fn new() -> Self {
        Product {
            exact: Some((1, 1)),
            float: 1.0,
        }
    }

    fn mul(&mut self, num: u64, den: u64) {
        self.float *= num as f64 / den as f64;
        self.exact = self.exact.and_then(|(p, q)| {
            let (p, q) = (p.checked_mul(num as u128)?, q.checked_mul(den as u128)?);
            let g = gcd(p, q).max(1);
            Some((p / g, q / g))
        });
    }

    fn value(&self) -> f64 {
        match self.exact {
            Some((p, q)) if p < (1u128 << 53) && q < (1u128 << 53) => p as f64 / q as f64,
            _ => self.float,
        }
    }
}

/// Kaplan-Meier product-limit estimate. Subjects censored at an event time
/// are still at risk at that time.
pub fn km_fit(observations: &[SurvivalObservation]) -> Result<SurvivalCurve, ModelError> {
    if observations.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    if let Some(bad) = observations
        .iter()
        .find(|o| !(o.duration.is_finite() && o.duration > 0.0))
    {
        return Err(ModelError::InvalidInput(format!(
            "duration {} is not positive",
            bad.duration
        )));
    }
    let mut sorted = observations.to_vec();
    sorted.sort_by(|a, b| a.duration.total_cmp(&b.duration));

    let mut curve = SurvivalCurve {
        times: Vec::new(),
        survival: Vec::new(),
        at_risk: Vec::new(),
        events: Vec::new(),
    };
    let mut product = Product::new();
    let mut remaining = sorted.len() as u64;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].duration;
        let mut j = i;
        let mut deaths = 0u64;
        while j < sorted.len() && sorted[j].duration == t {
            deaths += u64::from(sorted[j].event_observed);
            j += 1;
        }
        if deaths > 0 {
            product.mul(remaining - deaths, remaining);
            curve.times.push(t);
            curve.survival.push(product.value());
            curve.at_risk.push(remaining);
            curve.events.push(deaths);
        }
        remaining -= (j - i) as u64;
        i = j;
    }
    Ok(curve)
}

impl KvCodec for SurvivalCurve {
    const KIND: &'static str = "survival_curve";

    fn to_kv(&self) -> KvDoc {
        let mut d = KvDoc::with_kind(Self::KIND);
        d.set_list("times", &self.times);
        d.set_list("survival", &self.survival);
        d.set_list("at_risk", &self.at_risk);
        d.set_list("events", &self.events);
        d
    }

    fn from_kv(doc: &KvDoc) -> Result<Self, KvError> {
        Ok(SurvivalCurve {
            times: doc.get_list("times")?,
            survival: doc.get_list("survival")?,
            at_risk: doc.get_list("at_risk")?,
            events: doc.get_list("events")?,
        })
    }
}
