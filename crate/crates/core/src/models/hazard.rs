//! Discrete-time logistic hazard: the per-period event probability is
//! `logistic(w . x + b)`, fit by full-batch gradient descent on the
//! L2-regularized mean log-loss (the intercept is not penalized).

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::kvtext::{KvCodec, KvDoc, KvError};

pub const GRAD_TOLERANCE: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 10_000;
/// With no regularization, weights beyond this mean the data is separable.
const DIVERGENCE_BOUND: f64 = 1e3;

fn separable() -> ModelError {
    ModelError::DegenerateFeatures("classes are perfectly separable; set l2_lambda > 0".into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardRow {
    pub features: Vec<f64>,
    pub event_this_period: bool,
}

impl HazardRow {
    pub fn new(features: Vec<f64>, event_this_period: bool) -> Self {
        HazardRow {
            features,
            event_this_period,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub l2_lambda: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    /// `false` when the iteration cap was hit before the gradient tolerance.
    pub converged: bool,
}

impl HazardModel {
    /// The untrained model: all weights zero.
    pub fn zero(dim: usize, l2_lambda: f64) -> Self {
        HazardModel {
            weights: vec![0.0; dim],
            intercept: 0.0,
            l2_lambda,
            iterations: 0,
            grad_norm: f64::NAN,
            converged: false,
        }
    }

    pub fn hazard(&self, features: &[f64]) -> f64 {
        logistic(dot(&self.weights, features) + self.intercept)
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Parameters laid out as `[w_0, ..., w_{d-1}, intercept]`.
pub fn loss(rows: &[HazardRow], params: &[f64], l2_lambda: f64) -> f64 {
    let (w, b) = params.split_at(params.len() - 1);
    let n = rows.len() as f64;
    let data: f64 = rows
        .iter()
        .map(|r| {
            let z = dot(w, &r.features) + b[0];
            softplus(z) - if r.event_this_period { z } else { 0.0 }
        })
        .sum::<f64>()
        / n;
    data + 0.5 * l2_lambda * dot(w, w)
}

pub fn gradient(rows: &[HazardRow], params: &[f64], l2_lambda: f64) -> Vec<f64> {
    let d = params.len() - 1;
    let (w, b) = params.split_at(d);
    let n = rows.len() as f64;
    let mut g = vec![0.0; d + 1];
    for r in rows {
        let resid = logistic(dot(w, &r.features) + b[0]) - f64::from(u8::from(r.event_this_period));
        for (gi, xi) in g.iter_mut().zip(&r.features) {
            *gi += resid * xi;
        }
        g[d] += resid;
    }
    for gi in &mut g {
        *gi /= n;
    }
    for (gi, wi) in g.iter_mut().zip(w) {
        *gi += l2_lambda * wi;
    }
    g
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Gradient descent from zero with Armijo backtracking, until the gradient
/// norm is at most [`GRAD_TOLERANCE`] or [`MAX_ITERATIONS`] steps.
pub fn hazard_fit(rows: &[HazardRow], l2_lambda: f64) -> Result<HazardModel, ModelError> {
    if rows.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    if !(l2_lambda >= 0.0 && l2_lambda.is_finite()) {
        return Err(ModelError::InvalidInput("l2_lambda must be >= 0".into()));
    }
    let d = rows[0].features.len();
    if rows.iter().any(|r| r.features.len() != d) {
        return Err(ModelError::InvalidInput("rows have different feature counts".into()));
    }
    if rows.iter().flat_map(|r| &r.features).any(|x| !x.is_finite()) {
        return Err(ModelError::InvalidInput("non-finite feature".into()));
    }
    let positives = rows.iter().filter(|r| r.event_this_period).count();
    if l2_lambda == 0.0 && (positives == 0 || positives == rows.len()) {
        return Err(ModelError::DegenerateFeatures(
            "all rows share one label; the unregularized intercept diverges".into(),
        ));
    }

    let mut params = vec![0.0; d + 1];
    let mut f = loss(rows, &params, l2_lambda);
    let mut g = gradient(rows, &params, l2_lambda);
    let mut step = 1.0;
    let mut iterations = 0;
    while norm(&g) > GRAD_TOLERANCE && iterations < MAX_ITERATIONS {
        let gg = dot(&g, &g);
        step *= 2.0;
        let (next, f_next) = loop {
            let cand: Vec<f64> = params.iter().zip(&g).map(|(p, gi)| p - step * gi).collect();
            let f_cand = loss(rows, &cand, l2_lambda);
            if f_cand <= f - 0.5 * step * gg || step < 1e-12 {
                break (cand, f_cand);
            }
            step *= 0.5;
        };
        params = next;
        f = f_next;
        g = gradient(rows, &params, l2_lambda);
        iterations += 1;
        if l2_lambda == 0.0 && params.iter().any(|p| p.abs() > DIVERGENCE_BOUND) {
            return Err(separable());
        }
    }
    let grad_norm = norm(&g);
    let intercept = params.pop().expect("intercept slot");
    // Weights that classify every row strictly correctly prove separability,
    // in which case the small gradient only reflects a diverging likelihood.
    if l2_lambda == 0.0 {
        let all_correct = rows.iter().all(|r| {
            let z = dot(&params, &r.features) + intercept;
            if r.event_this_period { z > 0.0 } else { z < 0.0 }
        });
        if all_correct {
            return Err(separable());
        }
    }
    Ok(HazardModel {
        weights: params,
        intercept,
        l2_lambda,
        iterations,
        grad_norm,
        converged: grad_norm <= GRAD_TOLERANCE,
    })
}

/// Probability of at least one event within `horizon_periods`:
/// `1 - (1 - h)^horizon` with `h` the per-period hazard.
pub fn hazard_predict_risk(model: &HazardModel, features: &[f64], horizon_periods: u32) -> f64 {
    let h = model.hazard(features);
    1.0 - (1.0 - h).powi(horizon_periods.max(1) as i32)
}

impl KvCodec for HazardModel {
    const KIND: &'static str = "hazard_model";

    fn to_kv(&self) -> KvDoc {
        let mut d = KvDoc::with_kind(Self::KIND);
        d.set_list("weights", &self.weights);
        d.set("intercept", self.intercept);
        d.set("l2_lambda", self.l2_lambda);
        d.set("iterations", self.iterations);
        d.set("grad_norm", self.grad_norm);
        d.set("converged", self.converged);
        d
    }

    fn from_kv(doc: &KvDoc) -> Result<Self, KvError> {
        Ok(HazardModel {
            weights: doc.get_list("weights")?,
            intercept: doc.get("intercept")?,
            l2_lambda: doc.get("l2_lambda")?,
            iterations: doc.get("iterations")?,
            grad_norm: doc.get("grad_norm")?,
            converged: doc.get("converged")?,
        })
    }
}
