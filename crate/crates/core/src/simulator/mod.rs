//! Deterministic synthetic pharmacy population.
//!
//! Each pharmacy owns an embedded [`DeviceBuffer`] and orders SKUs from a
//! catalog of complementary pairs plus a long tail. A fixed experiment sends
//! pair recommendations to the treated arm; an opened recommendation raises
//! the chance of ordering each recommended SKU for a week. Every random draw
//! comes from a ChaCha stream keyed by (seed, pharmacy, day, purpose), so the
//! with-exposure and without-exposure branches share their baseline baskets.

mod config;
mod truth;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;
use thiserror::Error;

use crate::data_model::{day_start_ms, NudgeRecord, Reaction, SchemaCatalog, Stream, SubjectId};
use crate::experiment::{ArmSpec, ControlAction, Design, ExperimentDef, CONTROL};
use crate::orchestrator::{ContentStrategy, InterventionPlan, MonitorPayload, TickReport};
use crate::platform::{export_segments, CohortDefinition, MetricDefinition, Platform, PlatformError, PlatformLink};
use crate::sdk::{DeviceBuffer, EventDraft, SdkError};

pub use config::{ScenarioConfig, SimDesign};
pub use truth::{DayTruth, GroundTruth, VARIETY_WINDOW_DAYS};

pub const EXPERIMENT_ID: &str = "pharmacy-pairs";
pub const TREATMENT_CONTENT: &str = "pair_recs";
/// Days an opened recommendation keeps acting, counting the open day.
pub const EFFECT_DAYS: i64 = 7;
const BATCH_EVENTS: usize = 500;
const HOUR_MS: i64 = 3_600_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Platform(#[from] PlatformError),
    #[error(transparent)]
    Sdk(#[from] SdkError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("calibration failed: {0}")]
    Calibration(String),
}

#[derive(Clone, Copy)]
enum Purpose {
    Init = 0,
    Basket = 1,
    Effect = 2,
    Connect = 3,
}

fn stream_rng(seed: u64, pharmacy: usize, day: i64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((pharmacy as u64) << 24) | (((day as u64) & 0xF_FFFF) << 4) | purpose as u64);
    rng
}

pub fn sku_name(index: u32) -> String {
    format!("SKU{index:04}")
}

pub fn sku_index(name: &str) -> Option<u32> {
    name.strip_prefix("SKU")?.parse().ok()
}

/// SKUs named in a pair-recommendation content reference.
pub fn recommended_skus(content_ref: &str) -> Vec<u32> {
    content_ref
        .split_once(':')
        .map(|(_, list)| list.split(',').filter_map(sku_index).collect())
        .unwrap_or_default()
}

/// Catalog layout: pairs `(2i, 2i + 1)` first, tail SKUs after them.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Catalog {
    n_pairs: usize,
    tail: Vec<u32>,
}

impl Catalog {
    fn new(size: usize) -> Self {
        let n_pairs = (size - size / 5) / 2;
        Catalog {
            n_pairs,
            tail: ((2 * n_pairs) as u32..size as u32).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ActiveRec {
    last_day: i64,
    prob: f64,
    skus: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pharmacy {
    pub subject: SubjectId,
    pub device: DeviceBuffer,
    pub facility: String,
    pub region: String,
    anchors: Vec<u32>,
    /// Partner SKU per anchor, for the pairs this pharmacy buys together.
    partners: Vec<Option<u32>>,
    active: Vec<ActiveRec>,
    opened: u32,
}

impl Pharmacy {
    /// Regular SKUs: anchors plus the partners bought alongside them.
    pub fn preferred_skus(&self) -> BTreeSet<u32> {
        self.anchors.iter().copied().chain(self.partners.iter().flatten().copied()).collect()
    }

    pub fn nudges_opened(&self) -> u32 {
        self.opened
    }
}

/// Simulation state between days.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    config: ScenarioConfig,
    catalog: Catalog,
    schema: SchemaCatalog,
    pharmacies: Vec<Pharmacy>,
    truth: GroundTruth,
    day: i64,
}

impl Simulation {
    pub fn new(config: ScenarioConfig) -> Result<Self, SimError> {
        config.validate()?;
        let catalog = Catalog::new(config.catalog_size);
        let n_regular = config.regular_pairs.min(catalog.n_pairs);
        let n_full = n_regular / 2;
        let mut pharmacies = Vec::with_capacity(config.n_pharmacies);
        for p in 0..config.n_pharmacies {
            let mut rng = stream_rng(config.seed, p, 0, Purpose::Init);
            let mut pairs = sample(&mut rng, catalog.n_pairs, n_regular).into_vec();
            pairs.sort_unstable();
            let full: BTreeSet<usize> = sample(&mut rng, n_regular, n_full).into_iter().collect();
            let subject = SubjectId::new(format!("pharmacy-{p:04}")).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
            pharmacies.push(Pharmacy {
                subject,
                device: DeviceBuffer::new(&format!("device-{p:04}")),
                facility: format!("facility-{:03}", p / config.pharmacies_per_facility),
                region: format!("region-{}", p % 4),
                anchors: pairs.iter().map(|&i| 2 * i as u32).collect(),
                partners: (0..n_regular)
                    .map(|k| full.contains(&k).then_some(2 * pairs[k] as u32 + 1))
                    .collect(),
                active: Vec::new(),
                opened: 0,
            });
        }
        let truth = GroundTruth::new(pharmacies.iter().map(|p| p.subject.clone()).collect(), config.start_day());
        Ok(Simulation {
            config,
            catalog,
            schema: SchemaCatalog::starter(),
            pharmacies,
            truth,
            day: 0,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn pharmacies(&self) -> &[Pharmacy] {
        &self.pharmacies
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }

    /// Next day to simulate.
    pub fn day(&self) -> i64 {
        self.day
    }

    pub fn is_finished(&self) -> bool {
        self.day >= self.config.total_days()
    }

    /// The intervention plan this scenario runs on the platform.
    pub fn plan(&self) -> InterventionPlan {
        let c = &self.config;
        let design = match c.design {
            SimDesign::FixedAb => Design::FixedAb { ratio: c.treat_ratio },
            SimDesign::ClusterAb => Design::ClusterAb {
                cluster_trait: "facility".into(),
                ratio: c.treat_ratio,
                match_on: Vec::new(),
            },
            SimDesign::MatchedClusterAb => Design::ClusterAb {
                cluster_trait: "facility".into(),
                ratio: c.treat_ratio,
                match_on: vec!["weekly_purchased_variety".into(), "orders_last_28d".into()],
            },
        };
        let mut plan = InterventionPlan::new(ExperimentDef {
            experiment_id: EXPERIMENT_ID.into(),
            cohort: CohortDefinition::everyone(),
            arms: vec![
                ArmSpec { arm_id: 0, content_ref: "none".into() },
                ArmSpec { arm_id: 1, content_ref: TREATMENT_CONTENT.into() },
            ],
            design,
            metric: MetricDefinition::weekly_variety_mean(),
            cadence_days: c.cadence_days,
            start_day: c.start_day(),
            end_day: c.total_days() - 1,
            seed: c.seed,
            status: Default::default(),
        });
        plan.content = ContentStrategy::PairRecommendation {
            k: c.recommendations,
            lookback_days: c.warmup_days.max(7),
        };
        plan
    }

    fn offline(&self, day: i64, rng: &mut ChaCha8Rng) -> bool {
        let coin = rng.random::<f64>() < self.config.offline_prob;
        let outage = self.config.outage.is_some_and(|(a, b)| (a..=b).contains(&day));
        coin || outage
    }

    fn log(&mut self, p: usize, draft: EventDraft) -> Result<(), SimError> {
        self.pharmacies[p].device.log_event(draft, &self.schema)?;
        Ok(())
    }

    fn flush(&mut self, p: usize, link: &mut impl PlatformLink) -> Result<(), SimError> {
        let device = &mut self.pharmacies[p].device;
        for batch in device.drain_batches(BATCH_EVENTS) {
            let ack = link.upload(&batch)?;
            device.apply_ack(&ack)?;
        }
        Ok(())
    }

    fn receive(&mut self, p: usize, day: i64, nudges: Vec<NudgeRecord>, rng: &mut ChaCha8Rng) -> Result<(), SimError> {
        let at = day_start_ms(day) + 8 * HOUR_MS;
        let ph = &mut self.pharmacies[p];
        let delivered = ph.device.receive_nudges(nudges, at + 1_000, &self.schema)?;
        for id in delivered {
            let open = rng.random::<f64>() < self.config.open_prob;
            let kind = if open { Reaction::Opened } else { Reaction::Discarded };
            ph.device.record_reaction(&id, kind, at + 60_000, &self.schema)?;
            if open {
                let content = ph.device.nudge(&id).map(|n| n.content_ref.clone()).unwrap_or_default();
                let prob = self.config.effect_delta * self.config.fatigue_gamma.powi(ph.opened as i32);
                ph.active.push(ActiveRec {
                    last_day: day + EFFECT_DAYS - 1,
                    prob,
                    skus: recommended_skus(&content),
                });
                ph.opened += 1;
            }
        }
        Ok(())
    }

    fn orders(&mut self, p: usize, day: i64) -> Result<DayTruth, SimError> {
        let c = &self.config;
        let mut base = stream_rng(c.seed, p, day, Purpose::Basket);
        let mut eff = stream_rng(c.seed, p, day, Purpose::Effect);
        let poisson = Poisson::new(c.base_order_rate).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        let sizes = WeightedIndex::new(c.basket_size_dist).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        let ph = &self.pharmacies[p];
        let mut active: BTreeMap<u32, f64> = BTreeMap::new();
        for rec in ph.active.iter().filter(|r| r.last_day >= day) {
            for &s in &rec.skus {
                let slot = active.entry(s).or_insert(0.0);
                *slot = slot.max(rec.prob);
            }
        }
        let n_baskets = poisson.sample(&mut base) as usize;
        let mut truth = DayTruth::default();
        let mut drafts = Vec::new();
        let span = 9 * HOUR_MS / (n_baskets as i64 + 1);
        for j in 0..n_baskets {
            let size = sizes.sample(&mut base) + 1;
            let mut items: BTreeSet<u32> = BTreeSet::new();
            for _ in 0..size {
                let from_tail = base.random::<f64>() < c.tail_share;
                let pick = if from_tail && !self.catalog.tail.is_empty() {
                    self.catalog.tail[base.random_range(0..self.catalog.tail.len())]
                } else {
                    ph.anchors[base.random_range(0..ph.anchors.len())]
                };
                items.insert(pick);
            }
            for (a, partner) in ph.anchors.iter().zip(&ph.partners) {
                if let Some(partner) = partner {
                    if items.contains(a) && base.random::<f64>() < c.partner_prob {
                        items.insert(*partner);
                    }
                }
            }
            let mut qty: BTreeMap<u32, u32> = items.iter().map(|&s| (s, base.random_range(1..=3))).collect();
            for (&s, &prob) in &active {
                if eff.random::<f64>() < prob {
                    qty.entry(s).or_insert(1);
                }
            }
            let ts = day_start_ms(day) + 9 * HOUR_MS + (j as i64 + 1) * span;
            let basket = format!("d{day}-{}", crate::orchestrator::letters(j as u64));
            for (k, (&s, &q)) in qty.iter().enumerate() {
                drafts.push(
                    EventDraft::new(ph.subject.clone(), Stream::Ecommerce, "order_placed", ts + k as i64)
                        .with("sku", sku_name(s).as_str())
                        .with("qty", q as f64)
                        .with("basket_id", basket.as_str()),
                );
            }
            truth.without.extend(items);
            truth.with.extend(qty.keys());
        }
        for d in drafts {
            self.log(p, d)?;
        }
        Ok(truth)
    }

    /// Simulates one day: the platform's daily tick, then every pharmacy in
    /// order. Returns the tick reports.
    pub fn step_day(&mut self, platform: &mut Platform) -> Result<Vec<TickReport>, SimError> {
        let day = self.day;
        platform.attribute_rewards(day)?;
        let reports = platform.tick(day)?;
        if !reports.is_empty() {
            self.mark_treated(platform);
        }
        for p in 0..self.pharmacies.len() {
            let mut conn = stream_rng(self.config.seed, p, day, Purpose::Connect);
            let online = !self.offline(day, &mut conn);
            if online {
                let ph = &self.pharmacies[p];
                let draft = EventDraft::new(ph.subject.clone(), Stream::Core, "app_open", day_start_ms(day) + 8 * HOUR_MS)
                    .with("facility", ph.facility.as_str())
                    .with("region", ph.region.as_str());
                self.log(p, draft)?;
                let nudges = platform.poll_nudges(self.pharmacies[p].device.device_id());
                self.receive(p, day, nudges, &mut conn)?;
            }
            let t = self.orders(p, day)?;
            self.truth.days[p].push(t);
            let ph = &mut self.pharmacies[p];
            ph.active.retain(|r| r.last_day > day);
            self.truth.generated_events[p] = ph.device.next_seq() - 1;
            if online {
                self.flush(p, platform)?;
            }
        }
        self.day += 1;
        Ok(reports)
    }

    fn mark_treated(&mut self, platform: &Platform) {
        let Ok(run) = platform.experiment(EXPERIMENT_ID) else { return };
        let Some(table) = run.assignment() else { return };
        for (p, ph) in self.pharmacies.iter().enumerate() {
            self.truth.treated[p] = table.arm_of(&ph.subject).is_some_and(|a| a != CONTROL);
        }
    }

    /// Uploads everything still buffered, as if every device came online.
    pub fn final_sync(&mut self, platform: &mut Platform) -> Result<(), SimError> {
        for p in 0..self.pharmacies.len() {
            self.flush(p, platform)?;
        }
        Ok(())
    }
}

/// Everything a finished run produced.
#[derive(Debug)]
pub struct SimOutput {
    pub config: ScenarioConfig,
    pub platform: Platform,
    pub truth: GroundTruth,
    pub ticks: Vec<TickReport>,
    /// Daily estimates over the experiment, absent for an empty population.
    pub monitor: Option<MonitorPayload>,
}

/// Drives a scenario from the first day to the last on an in-memory platform.
pub fn run(config: &ScenarioConfig) -> Result<SimOutput, SimError> {
    run_on(config, Platform::in_memory())
}

/// Like [`run`] on a caller-supplied platform, for file-backed runs.
pub fn run_on(config: &ScenarioConfig, mut platform: Platform) -> Result<SimOutput, SimError> {
    let mut sim = Simulation::new(config.clone())?;
    let has_experiment = config.n_pharmacies > 0;
    if has_experiment {
        platform.create_experiment(sim.plan())?;
        platform.control(EXPERIMENT_ID, ControlAction::Start)?;
    }
    let mut ticks = Vec::new();
    while !sim.is_finished() {
        ticks.extend(sim.step_day(&mut platform)?);
    }
    sim.final_sync(&mut platform)?;
    let monitor = if has_experiment {
        Some(platform.monitor(EXPERIMENT_ID, 0, config.days as i64 - 1)?)
    } else {
        None
    };
    Ok(SimOutput {
        config: config.clone(),
        platform,
        truth: sim.truth,
        ticks,
        monitor,
    })
}

impl SimOutput {
    /// Writes `scenario.txt`, `log/`, `experiments.json`, `ticks.json`,
    /// `monitor.json` and `ground_truth.csv` under `dir`. The directory can
    /// be reopened with [`Platform::open`].
    pub fn write_to(&self, dir: &Path) -> Result<(), SimError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("scenario.txt"), self.config.to_text())?;
        export_segments(self.platform.log(), &dir.join("log"), crate::platform::DEFAULT_SEGMENT_LINES)?;
        fs::write(dir.join("experiments.json"), pretty_json(&self.platform.orchestrator().snapshots()))?;
        fs::write(dir.join("ticks.json"), pretty_json(&self.ticks))?;
        if let Some(m) = &self.monitor {
            fs::write(dir.join("monitor.json"), pretty_json(m))?;
        }
        fs::write(dir.join("ground_truth.csv"), self.truth.to_csv(sku_name))?;
        Ok(())
    }
}

fn pretty_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

/// Result of tuning `effect_delta` against the ground-truth oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub effect_delta: f64,
    /// Mean true effect over the target days at `effect_delta`.
    pub achieved: f64,
}

/// Mean true effect over experiment days `from..=to` for `config`.
pub fn mean_true_effect(config: &ScenarioConfig, from: i64, to: i64) -> Result<f64, SimError> {
    let mut cfg = config.clone();
    cfg.days = cfg.days.max(to as u32 + 1);
    let mut sim = Simulation::new(cfg.clone())?;
    let mut platform = Platform::in_memory();
    platform.create_experiment(sim.plan())?;
    platform.control(EXPERIMENT_ID, ControlAction::Start)?;
    while sim.day() <= cfg.start_day() + to {
        sim.step_day(&mut platform)?;
    }
    let truth = sim.truth();
    Ok((from..=to).map(|d| truth.true_effect(d)).sum::<f64>() / (to - from + 1) as f64)
}

/// Bisects `effect_delta` in [0, 1] until the mean true effect over
/// experiment days `from..=to` is within `tol` of `target`.
pub fn calibrate_effect_delta(
    config: &ScenarioConfig,
    target: f64,
    from: i64,
    to: i64,
    tol: f64,
) -> Result<Calibration, SimError> {
    if config.n_pharmacies == 0 || from > to || from < 0 {
        return Err(SimError::Calibration("needs pharmacies and a non-empty day range".into()));
    }
    let at = |delta: f64| {
        let cfg = ScenarioConfig { effect_delta: delta, ..config.clone() };
        mean_true_effect(&cfg, from, to)
    };
    let top = at(1.0)?;
    if top < target {
        return Err(SimError::Calibration(format!("effect at delta 1 is only {top:.3}")));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut best = Calibration { effect_delta: 1.0, achieved: top };
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let got = at(mid)?;
        best = Calibration { effect_delta: mid, achieved: got };
        if (got - target).abs() <= tol {
            break;
        }
        if got < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best)
}
