//! Scenario parameters and their `key=value` file form.

use std::fmt;
use std::str::FromStr;

use crate::kvtext::{KvDoc, KvError};

use super::SimError;

/// How the simulated experiment assigns pharmacies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SimDesign {
    /// Individual pharmacies split at random.
    #[default]
    FixedAb,
    /// Whole facilities split at random.
    ClusterAb,
    /// Facilities paired on pre-period behaviour, one of each pair treated.
    MatchedClusterAb,
}

impl SimDesign {
    pub fn as_str(self) -> &'static str {
        match self {
            SimDesign::FixedAb => "fixed_ab",
            SimDesign::ClusterAb => "cluster_ab",
            SimDesign::MatchedClusterAb => "matched_cluster_ab",
        }
    }
}

impl fmt::Display for SimDesign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SimDesign {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fixed_ab" => Ok(SimDesign::FixedAb),
            "cluster_ab" => Ok(SimDesign::ClusterAb),
            "matched_cluster_ab" => Ok(SimDesign::MatchedClusterAb),
            other => Err(format!("unknown design `{other}`")),
        }
    }
}

/// Every knob of a simulated pharmacy population and its experiment.
///
/// Days are counted from the start of the simulation. The experiment starts
/// after `warmup_days` of untreated history and lasts `days` days.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub n_pharmacies: usize,
    pub catalog_size: usize,
    pub days: u32,
    pub warmup_days: u32,
    /// Mean baskets per pharmacy per day.
    pub base_order_rate: f64,
    /// Weights for basket sizes 1 through 5.
    pub basket_size_dist: [f64; 5],
    /// Complementary SKU pairs each pharmacy orders the first item of.
    pub regular_pairs: usize,
    /// Chance a basket holding an anchor SKU also holds its partner, for the
    /// pairs a pharmacy already buys together.
    pub partner_prob: f64,
    /// Share of drawn items that come from the long tail of the catalog.
    pub tail_share: f64,
    pub effect_delta: f64,
    pub fatigue_gamma: f64,
    pub open_prob: f64,
    pub offline_prob: f64,
    /// Inclusive day range during which every device is offline.
    pub outage: Option<(i64, i64)>,
    pub design: SimDesign,
    pub treat_ratio: f64,
    pub recommendations: usize,
    pub cadence_days: u32,
    pub pharmacies_per_facility: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_pharmacies: 200,
            catalog_size: 200,
            days: 60,
            warmup_days: 56,
            base_order_rate: 2.0,
            basket_size_dist: [0.3, 0.3, 0.2, 0.12, 0.08],
            regular_pairs: 6,
            partner_prob: 0.9,
            tail_share: 0.3,
            effect_delta: 0.0,
            fatigue_gamma: 1.0,
            open_prob: 0.8,
            offline_prob: 0.05,
            outage: None,
            design: SimDesign::FixedAb,
            treat_ratio: 0.5,
            recommendations: 8,
            cadence_days: 7,
            pharmacies_per_facility: 4,
            seed: 0,
        }
    }
}

const KEYS: &[&str] = &[
    "n_pharmacies",
    "catalog_size",
    "days",
    "warmup_days",
    "base_order_rate",
    "basket_size_dist",
    "regular_pairs",
    "partner_prob",
    "tail_share",
    "effect_delta",
    "fatigue_gamma",
    "open_prob",
    "offline_prob",
    "outage_start",
    "outage_end",
    "design",
    "treat_ratio",
    "recommendations",
    "cadence_days",
    "pharmacies_per_facility",
    "seed",
];

fn kv(e: KvError) -> SimError {
    SimError::InvalidConfig(e.to_string())
}

impl ScenarioConfig {
    pub fn total_days(&self) -> i64 {
        self.warmup_days as i64 + self.days as i64
    }

    /// First experiment day.
    pub fn start_day(&self) -> i64 {
        self.warmup_days as i64
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        let prob = |name: &str, p: f64| -> Result<(), SimError> {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(SimError::InvalidConfig(format!("{name} must lie in [0, 1], got {p}")))
            }
        };
        for (name, p) in [
            ("partner_prob", self.partner_prob),
            ("tail_share", self.tail_share),
            ("effect_delta", self.effect_delta),
            ("open_prob", self.open_prob),
            ("offline_prob", self.offline_prob),
            ("treat_ratio", self.treat_ratio),
        ] {
            prob(name, p)?;
        }
        if !(self.fatigue_gamma > 0.0 && self.fatigue_gamma <= 1.0) {
            return bad(format!("fatigue_gamma must lie in (0, 1], got {}", self.fatigue_gamma));
        }
        if !(self.base_order_rate.is_finite() && self.base_order_rate > 0.0) {
            return bad(format!("base_order_rate must be positive, got {}", self.base_order_rate));
        }
        if self.basket_size_dist.iter().any(|w| !w.is_finite() || *w < 0.0)
            || self.basket_size_dist.iter().sum::<f64>() <= 0.0
        {
            return bad("basket_size_dist needs five non-negative weights with a positive sum".into());
        }
        if self.catalog_size < 2 {
            return bad(format!("catalog_size must be at least 2, got {}", self.catalog_size));
        }
        if self.regular_pairs == 0 {
            return bad("regular_pairs must be positive".into());
        }
        if self.days == 0 {
            return bad("days must be positive".into());
        }
        if self.cadence_days == 0 || self.pharmacies_per_facility == 0 {
            return bad("cadence_days and pharmacies_per_facility must be positive".into());
        }
        if let Some((a, b)) = self.outage {
            if a > b || a < 0 {
                return bad(format!("outage range {a}..={b} is empty or negative"));
            }
        }
        Ok(())
    }

    /// Parses a scenario file; absent keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let doc = KvDoc::parse(text).map_err(kv)?;
        if let Some(k) = doc.keys().find(|k| !KEYS.contains(k)) {
            return Err(SimError::InvalidConfig(format!("unknown key `{k}`")));
        }
        let d = ScenarioConfig::default();
        let basket_size_dist = match doc.raw("basket_size_dist") {
            None => d.basket_size_dist,
            Some(_) => {
                let w: Vec<f64> = doc.get_list("basket_size_dist").map_err(kv)?;
                w.try_into().map_err(|_| {
                    SimError::InvalidConfig("basket_size_dist needs exactly five weights".into())
                })?
            }
        };
        let outage = match (doc.raw("outage_start"), doc.raw("outage_end")) {
            (None, None) => None,
            (Some(_), Some(_)) => Some((doc.get("outage_start").map_err(kv)?, doc.get("outage_end").map_err(kv)?)),
            _ => return Err(SimError::InvalidConfig("outage_start and outage_end go together".into())),
        };
        let design = match doc.raw("design") {
            None => d.design,
            Some(s) => s.parse().map_err(SimError::InvalidConfig)?,
        };
        let cfg = ScenarioConfig {
            n_pharmacies: doc.get_or("n_pharmacies", d.n_pharmacies).map_err(kv)?,
            catalog_size: doc.get_or("catalog_size", d.catalog_size).map_err(kv)?,
            days: doc.get_or("days", d.days).map_err(kv)?,
            warmup_days: doc.get_or("warmup_days", d.warmup_days).map_err(kv)?,
            base_order_rate: doc.get_or("base_order_rate", d.base_order_rate).map_err(kv)?,
            basket_size_dist,
            regular_pairs: doc.get_or("regular_pairs", d.regular_pairs).map_err(kv)?,
            partner_prob: doc.get_or("partner_prob", d.partner_prob).map_err(kv)?,
            tail_share: doc.get_or("tail_share", d.tail_share).map_err(kv)?,
            effect_delta: doc.get_or("effect_delta", d.effect_delta).map_err(kv)?,
            fatigue_gamma: doc.get_or("fatigue_gamma", d.fatigue_gamma).map_err(kv)?,
            open_prob: doc.get_or("open_prob", d.open_prob).map_err(kv)?,
            offline_prob: doc.get_or("offline_prob", d.offline_prob).map_err(kv)?,
            outage,
            design,
            treat_ratio: doc.get_or("treat_ratio", d.treat_ratio).map_err(kv)?,
            recommendations: doc.get_or("recommendations", d.recommendations).map_err(kv)?,
            cadence_days: doc.get_or("cadence_days", d.cadence_days).map_err(kv)?,
            pharmacies_per_facility: doc
                .get_or("pharmacies_per_facility", d.pharmacies_per_facility)
                .map_err(kv)?,
            seed: doc.get_or("seed", d.seed).map_err(kv)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key, in a stable order; `parse` of the result is lossless.
    pub fn to_text(&self) -> String {
        let mut doc = KvDoc::default();
        doc.set("n_pharmacies", self.n_pharmacies);
        doc.set("catalog_size", self.catalog_size);
        doc.set("days", self.days);
        doc.set("warmup_days", self.warmup_days);
        doc.set("base_order_rate", self.base_order_rate);
        doc.set_list("basket_size_dist", &self.basket_size_dist);
        doc.set("regular_pairs", self.regular_pairs);
        doc.set("partner_prob", self.partner_prob);
        doc.set("tail_share", self.tail_share);
        doc.set("effect_delta", self.effect_delta);
        doc.set("fatigue_gamma", self.fatigue_gamma);
        doc.set("open_prob", self.open_prob);
        doc.set("offline_prob", self.offline_prob);
        if let Some((a, b)) = self.outage {
            doc.set("outage_start", a);
            doc.set("outage_end", b);
        }
        doc.set("design", self.design);
        doc.set("treat_ratio", self.treat_ratio);
        doc.set("recommendations", self.recommendations);
        doc.set("cadence_days", self.cadence_days);
        doc.set("pharmacies_per_facility", self.pharmacies_per_facility);
        doc.set("seed", self.seed);
        doc.to_text()
    }
}
