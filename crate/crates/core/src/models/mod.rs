//! Classical predictive models: product-limit survival, discrete-time
//! logistic hazard, Holt linear smoothing with residual intervals, and
//! basket co-occurrence with lift ranking.

pub mod cooccurrence;
pub mod forecast;
pub mod hazard;
pub mod survival;

use thiserror::Error;

pub use cooccurrence::{
    baskets_from_log, cooccurrence_fit, pair_recommend, regular_items, CooccurrenceModel, PairRecommender,
};
pub use forecast::{forecast_fit_predict, ForecastResult};
pub use hazard::{hazard_fit, hazard_predict_risk, HazardModel, HazardRow};
pub use survival::{km_fit, SurvivalCurve, SurvivalObservation};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("no observations")]
    EmptyInput,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate features: {0}")]
    DegenerateFeatures(String),
    #[error("series has {0} points; at least 3 are needed")]
    SeriesTooShort(usize),
}
