//! The daily decision loop. Each tick picks arms for eligible subjects,
//! creates nudges for their devices and, once reward windows close, feeds
//! outcomes back to adaptive policies.

mod monitor;
mod plan;

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bandit::{egreedy_choose, BanditError, Decision, LinUcbState, TsState};
use crate::data_model::{day_end_ms, day_of, day_start_ms, NudgeRecord, Reaction, SubjectId, TraitScalar};
use crate::experiment::{
    assign_cluster, assign_fixed, pairwise_match, schedule_micro, AssignmentTable, ControlAction, Design,
    ExperimentError, ExperimentStatus, IllegalStatusChange, MicroAction, PolicyKind, CONTROL, TREATMENT,
};
use crate::kvtext::KvCodec;
use crate::models::{baskets_from_log, cooccurrence_fit, regular_items, PairRecommender};
use crate::platform::{evaluate_cohort, CohortError, EventLog, MetricError, TraitError, TraitRegistry};

pub use monitor::MonitorPayload;
pub use plan::{ContentStrategy, InterventionPlan, RewardMode, RewardSpec, DEFAULT_FREQUENCY_CAP};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrchestratorError {
    #[error("unknown experiment {0:?}")]
    UnknownExperiment(String),
    #[error("experiment {0:?} already exists")]
    DuplicateExperiment(String),
    #[error("experiment is {0}, not running")]
    ExperimentNotRunning(ExperimentStatus),
    #[error("day {day} is outside the experiment window [{start}, {end}]")]
    OutsideWindow { day: i64, start: i64, end: i64 },
    #[error("policy unavailable: {0}")]
    PolicyUnavailable(String),
    #[error(transparent)]
    IllegalTransition(#[from] IllegalStatusChange),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Trait(#[from] TraitError),
    #[error(transparent)]
    Bandit(#[from] BanditError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    Capped,
    Ineligible,
    Paused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickDecision {
    pub subject_id: SubjectId,
    pub arm_id: u32,
    pub nudge_id: String,
    pub propensity: Option<f64>,
}

/// Outcome of one tick. `withheld` lists control subjects, who are assigned
/// but never nudged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickReport {
    pub experiment_id: String,
    pub day: i64,
    pub decisions: Vec<TickDecision>,
    pub withheld: Vec<SubjectId>,
    pub skipped: Vec<(SubjectId, SkipReason)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub nudge_id: String,
    pub subject_id: SubjectId,
    pub arm_id: u32,
    pub day: i64,
    pub reward: f64,
}

/// Cohort and cadence checks see data up to the end of the previous day.
pub fn tick_as_of(day: i64) -> i64 {
    day_start_ms(day) - 1
}

/// Bijective base-26 in lowercase letters; ids stay free of digit runs.
pub(crate) fn letters(mut n: u64) -> String {
    let mut out = Vec::new();
    loop {
        out.push(b'a' + (n % 26) as u8);
        if n < 26 {
            break;
        }
        n = n / 26 - 1;
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

#[derive(Debug, Clone, Default)]
struct RunningStat {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningStat {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn standardize(&self, x: f64) -> f64 {
        let var = if self.n > 1 { self.m2 / self.n as f64 } else { 0.0 };
        if var > 0.0 {
            (x - self.mean) / var.sqrt()
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone)]
enum Policy {
    LinUcb(LinUcbState),
    Thompson(TsState),
    EGreedy { epsilon: f64, sums: Vec<f64>, counts: Vec<u64>, rng: ChaCha8Rng },
}

impl Policy {
    fn choose(&mut self, context: &[f64], n_arms: usize) -> Result<Decision, BanditError> {
        let arms: Vec<u32> = (0..n_arms as u32).collect();
        match self {
            Policy::LinUcb(s) => s.choose(context, &arms),
            Policy::Thompson(s) => s.choose(context, &arms, true),
            Policy::EGreedy { epsilon, sums, counts, rng } => {
                let means: BTreeMap<u32, f64> = arms
                    .iter()
                    .map(|&a| {
                        let c = counts[a as usize];
                        (a, if c == 0 { 0.0 } else { sums[a as usize] / c as f64 })
                    })
                    .collect();
                let mut d = egreedy_choose(&means, *epsilon, rng)?;
                d.context = context.to_vec();
                Ok(d)
            }
        }
    }

    fn update(&mut self, decision: &Decision, reward: f64) -> Result<(), BanditError> {
        match self {
            Policy::LinUcb(s) => s.update(decision, reward),
            Policy::Thompson(s) => s.update(decision, reward),
            Policy::EGreedy { sums, counts, .. } => {
                let a = decision.arm_id as usize;
                if a >= sums.len() {
                    return Err(BanditError::UnknownArm(decision.arm_id));
                }
                sums[a] += reward;
                counts[a] += 1;
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Binding {
    Table(AssignmentTable),
    Micro(BTreeMap<(SubjectId, i64), MicroAction>),
    Adaptive(Box<Policy>),
}

#[derive(Debug, Clone)]
struct SentNudge {
    nudge: NudgeRecord,
    day: i64,
    arm_index: usize,
    decision: Option<Decision>,
}

/// One experiment's plan and everything the loop has done for it.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub plan: InterventionPlan,
    binding: Option<Binding>,
    sent: BTreeMap<String, SentNudge>,
    sent_days: BTreeMap<SubjectId, Vec<i64>>,
    /// Arm index per subject over time, from decisions and withholdings.
    arm_history: BTreeMap<SubjectId, Vec<(i64, usize)>>,
    attributed: BTreeSet<String>,
    rewards: Vec<RewardRecord>,
    ticks: Vec<TickReport>,
    context_stats: Vec<RunningStat>,
    nudge_counter: u64,
}

impl ExperimentRun {
    fn new(plan: InterventionPlan) -> Self {
        let context_stats = vec![RunningStat::default(); plan.context_traits.len()];
        ExperimentRun {
            plan,
            binding: None,
            sent: BTreeMap::new(),
            sent_days: BTreeMap::new(),
            arm_history: BTreeMap::new(),
            attributed: BTreeSet::new(),
            rewards: Vec::new(),
            ticks: Vec::new(),
            context_stats,
            nudge_counter: 0,
        }
    }

    pub fn status(&self) -> ExperimentStatus {
        self.plan.experiment.status
    }

    pub fn ticks(&self) -> &[TickReport] {
        &self.ticks
    }

    pub fn rewards(&self) -> &[RewardRecord] {
        &self.rewards
    }

    pub fn nudges(&self) -> impl Iterator<Item = &NudgeRecord> {
        self.sent.values().map(|s| &s.nudge)
    }

    /// The fixed assignment, once the first tick has created it.
    pub fn assignment(&self) -> Option<&AssignmentTable> {
        match &self.binding {
            Some(Binding::Table(t)) => Some(t),
            _ => None,
        }
    }

    /// Current adaptive policy state as key-value text, for LinUCB and
    /// Thompson sampling runs that have ticked at least once.
    pub fn policy_state_text(&self) -> Option<String> {
        let Some(Binding::Adaptive(policy)) = &self.binding else { return None };
        match policy.as_ref() {
            Policy::LinUcb(s) => Some(s.to_kv_text()),
            Policy::Thompson(s) => Some(s.to_kv_text()),
            Policy::EGreedy { .. } => None,
        }
    }

    /// Arm index of `subject` in effect on `day`, if any.
    pub fn arm_on(&self, subject: &SubjectId, day: i64) -> Option<usize> {
        if let Some(t) = self.assignment() {
            return t.arm_of(subject);
        }
        self.arm_history
            .get(subject)?
            .iter()
            .rev()
            .find(|(d, _)| *d <= day)
            .map(|&(_, a)| a)
    }

    fn next_nudge_id(&mut self) -> String {
        let id = format!("{}-{}", self.plan.experiment.experiment_id, letters(self.nudge_counter));
        self.nudge_counter += 1;
        id
    }

    fn capped(&self, subject: &SubjectId, day: i64) -> bool {
        let cadence = self.plan.experiment.cadence_days as i64;
        let recent = self
            .sent_days
            .get(subject)
            .map_or(0, |days| days.iter().filter(|&&d| d > day - cadence && d <= day).count());
        recent as u32 >= self.plan.frequency_cap
    }

    fn build_binding(&self, log: &EventLog, registry: &TraitRegistry, day: i64) -> Result<Binding, OrchestratorError> {
        let exp = &self.plan.experiment;
        let as_of = tick_as_of(day);
        let cohort = evaluate_cohort(log, registry, &exp.cohort, as_of)?;
        let unavailable = |m: &str| OrchestratorError::PolicyUnavailable(m.to_string());
        Ok(match &exp.design {
            Design::FixedAb { ratio } => {
                if cohort.is_empty() {
                    return Err(unavailable("cohort is empty at start"));
                }
                Binding::Table(assign_fixed(&cohort, *ratio, exp.seed)?)
            }
            Design::ClusterAb { cluster_trait, ratio, match_on } => {
                let mut clusters = BTreeMap::new();
                for s in &cohort {
                    if let TraitScalar::Str(c) = registry.compute(log, s, cluster_trait, as_of)?.value {
                        clusters.insert(s.clone(), c);
                    }
                }
                if clusters.is_empty() {
                    return Err(unavailable("no cohort subject has a cluster"));
                }
                if match_on.is_empty() {
                    Binding::Table(assign_cluster(&clusters, *ratio, exp.seed)?)
                } else {
                    let mut sums: BTreeMap<&String, (Vec<f64>, Vec<u32>)> = BTreeMap::new();
                    for (s, c) in &clusters {
                        let entry = sums.entry(c).or_insert_with(|| (vec![0.0; match_on.len()], vec![0; match_on.len()]));
                        for (j, t) in match_on.iter().enumerate() {
                            if let Some(v) = registry.compute(log, s, t, as_of)?.value.as_num() {
                                entry.0[j] += v;
                                entry.1[j] += 1;
                            }
                        }
                    }
                    let covariates: BTreeMap<String, Vec<f64>> = sums
                        .into_iter()
                        .map(|(c, (sum, n))| {
                            let means = sum.iter().zip(&n).map(|(s, &k)| if k == 0 { 0.0 } else { s / k as f64 }).collect();
                            (c.clone(), means)
                        })
                        .collect();
                    let (_, mut table) = pairwise_match(&covariates, exp.seed)?;
                    table.subjects = clusters.iter().map(|(s, c)| (s.clone(), table.clusters[c])).collect();
                    Binding::Table(table)
                }
            }
            Design::MicroRandomized { prob, decision_points } => {
                let days: Vec<i64> = decision_points.iter().map(|d| exp.start_day + d).collect();
                Binding::Micro(schedule_micro(&cohort, &days, *prob, exp.seed)?)
            }
            Design::Adaptive { policy } => {
                let n_arms = exp.arms.len();
                let dim = 1 + self.plan.context_traits.len();
                Binding::Adaptive(Box::new(match *policy {
                    PolicyKind::Linucb => Policy::LinUcb(LinUcbState::new(n_arms, dim)),
                    PolicyKind::Thompson => Policy::Thompson(TsState::new(n_arms, dim, exp.seed)),
                    PolicyKind::Egreedy { epsilon } => Policy::EGreedy {
                        epsilon,
                        sums: vec![0.0; n_arms],
                        counts: vec![0; n_arms],
                        rng: ChaCha8Rng::seed_from_u64(exp.seed),
                    },
                }))
            }
        })
    }

    fn contexts(
        &mut self,
        log: &EventLog,
        registry: &TraitRegistry,
        subjects: &[SubjectId],
        as_of: i64,
    ) -> Result<BTreeMap<SubjectId, Vec<f64>>, OrchestratorError> {
        let mut raw: BTreeMap<SubjectId, Vec<Option<f64>>> = BTreeMap::new();
        for s in subjects {
            let mut vals = Vec::with_capacity(self.plan.context_traits.len());
            for (j, t) in self.plan.context_traits.iter().enumerate() {
                let v = registry.compute(log, s, t, as_of)?.value.as_num();
                if let Some(x) = v {
                    self.context_stats[j].push(x);
                }
                vals.push(v);
            }
            raw.insert(s.clone(), vals);
        }
        Ok(raw
            .into_iter()
            .map(|(s, vals)| {
                let mut x = vec![1.0];
                x.extend(vals.iter().enumerate().map(|(j, v)| v.map_or(0.0, |v| self.context_stats[j].standardize(v))));
                (s, x)
            })
            .collect())
    }

    fn content(
        &self,
        arm_index: usize,
        subject: &SubjectId,
        log: &EventLog,
        model: &mut Option<PairRecommender>,
        as_of: i64,
    ) -> String {
        let base = self.plan.experiment.arms[arm_index].content_ref.clone();
        match self.plan.content {
            ContentStrategy::Static => base,
            ContentStrategy::PairRecommendation { k, lookback_days } => {
                let model = model.get_or_insert_with(|| {
                    let from = as_of - lookback_days as i64 * crate::data_model::DAY_MS;
                    PairRecommender::new(&cooccurrence_fit(&baskets_from_log(log, from, as_of)))
                });
                let recs = model.recommend(&regular_items(log, subject, as_of), k);
                format!("{base}:{}", recs.join(","))
            }
        }
    }

    fn tick(&mut self, log: &EventLog, registry: &TraitRegistry, day: i64) -> Result<(TickReport, Vec<NudgeRecord>), OrchestratorError> {
        let exp = &self.plan.experiment;
        match exp.status {
            ExperimentStatus::Running | ExperimentStatus::Paused => {}
            other => return Err(OrchestratorError::ExperimentNotRunning(other)),
        }
        if day < exp.start_day || day > exp.end_day {
            return Err(OrchestratorError::OutsideWindow { day, start: exp.start_day, end: exp.end_day });
        }
        let as_of = tick_as_of(day);
        let cohort = evaluate_cohort(log, registry, &exp.cohort, as_of)?;
        let mut report = TickReport {
            experiment_id: exp.experiment_id.clone(),
            day,
            decisions: Vec::new(),
            withheld: Vec::new(),
            skipped: Vec::new(),
        };
        let paused = exp.status == ExperimentStatus::Paused;
        if self.binding.is_none() && !paused {
            self.binding = Some(self.build_binding(log, registry, day)?);
        }

        // (subject, arm index) pairs that should get a nudge
        let mut to_nudge: Vec<(SubjectId, usize, Option<Decision>)> = Vec::new();
        let mut adaptive_candidates = Vec::new();
        for s in log.subjects() {
            if !cohort.contains(s) || log.device_of(s).is_none() {
                report.skipped.push((s.clone(), SkipReason::Ineligible));
                continue;
            }
            if paused {
                report.skipped.push((s.clone(), SkipReason::Paused));
                continue;
            }
            let arm = match self.binding.as_ref().expect("binding exists when running") {
                Binding::Table(t) => t.arm_of(s),
                Binding::Micro(schedule) => match schedule.get(&(s.clone(), day)) {
                    Some(MicroAction::Treat) => Some(TREATMENT),
                    Some(MicroAction::Withhold) => Some(CONTROL),
                    None => {
                        if schedule.keys().any(|(_, d)| *d == day) {
                            report.skipped.push((s.clone(), SkipReason::Ineligible));
                        }
                        continue;
                    }
                },
                Binding::Adaptive(_) => {
                    if self.capped(s, day) {
                        report.skipped.push((s.clone(), SkipReason::Capped));
                    } else {
                        adaptive_candidates.push(s.clone());
                    }
                    continue;
                }
            };
            match arm {
                None => report.skipped.push((s.clone(), SkipReason::Ineligible)),
                Some(CONTROL) => report.withheld.push(s.clone()),
                Some(_) if self.capped(s, day) => report.skipped.push((s.clone(), SkipReason::Capped)),
                Some(a) => to_nudge.push((s.clone(), a, None)),
            }
        }
        if !adaptive_candidates.is_empty() {
            let contexts = self.contexts(log, registry, &adaptive_candidates, as_of)?;
            let n_arms = self.plan.experiment.arms.len();
            let Some(Binding::Adaptive(policy)) = self.binding.as_mut() else {
                unreachable!("adaptive candidates imply an adaptive binding")
            };
            for (s, x) in contexts {
                let d = policy.choose(&x, n_arms)?;
                to_nudge.push((s, d.arm_id as usize, Some(d)));
            }
        }

        let mut model = None;
        let mut nudges = Vec::with_capacity(to_nudge.len());
        for (s, arm_index, decision) in to_nudge {
            let content_ref = self.content(arm_index, &s, log, &mut model, as_of);
            let nudge = NudgeRecord {
                nudge_id: self.next_nudge_id(),
                subject_id: s.clone(),
                experiment_id: self.plan.experiment.experiment_id.clone(),
                arm_id: self.plan.experiment.arms[arm_index].arm_id,
                content_ref,
                sent_at_ms: day_start_ms(day),
                reaction: Reaction::Pending,
                reaction_at_ms: None,
            };
            report.decisions.push(TickDecision {
                subject_id: s.clone(),
                arm_id: nudge.arm_id,
                nudge_id: nudge.nudge_id.clone(),
                propensity: decision.as_ref().map_or(Some(1.0), |d| d.propensity),
            });
            self.sent_days.entry(s.clone()).or_default().push(day);
            self.arm_history.entry(s).or_default().push((day, arm_index));
            self.sent.insert(
                nudge.nudge_id.clone(),
                SentNudge { nudge: nudge.clone(), day, arm_index, decision },
            );
            nudges.push(nudge);
        }
        for s in &report.withheld {
            self.arm_history.entry(s.clone()).or_default().push((day, CONTROL));
        }
        self.ticks.push(report.clone());
        Ok((report, nudges))
    }

    fn attribute_rewards(&mut self, log: &EventLog, day: i64) -> Result<Vec<RewardRecord>, OrchestratorError> {
        let spec = self.plan.reward_spec();
        let window = spec.window_days as i64;
        let due: Vec<String> = self
            .sent
            .iter()
            .filter(|(id, s)| s.day + window <= day && !self.attributed.contains(*id))
            .map(|(id, _)| id.clone())
            .collect();
        let mut out = Vec::with_capacity(due.len());
        for id in due {
            let sent = &self.sent[&id];
            let subject = &sent.nudge.subject_id;
            let end = day_end_ms(sent.day + window - 1);
            let reward = match spec.mode {
                RewardMode::Level => spec.metric.subject_value(log, subject, end)?.unwrap_or(0.0),
                RewardMode::Delta => {
                    let after = spec.metric.subject_value(log, subject, end)?.unwrap_or(0.0);
                    let before = spec.metric.subject_value(log, subject, sent.nudge.sent_at_ms)?.unwrap_or(0.0);
                    after - before
                }
                RewardMode::Reaction => match log.nudge_reaction(&id).map(|(r, _)| r) {
                    Some(Reaction::Opened | Reaction::Viewed) => 1.0,
                    Some(Reaction::Blocked) => -1.0,
                    _ => 0.0,
                },
            };
            if let (Some(decision), Some(Binding::Adaptive(policy))) = (&sent.decision, self.binding.as_mut()) {
                policy.update(decision, reward)?;
            }
            let record = RewardRecord {
                nudge_id: id.clone(),
                subject_id: subject.clone(),
                arm_id: self.plan.experiment.arms[sent.arm_index].arm_id,
                day,
                reward,
            };
            self.attributed.insert(id);
            self.rewards.push(record.clone());
            out.push(record);
        }
        Ok(out)
    }
}

/// Durable part of a run: enough to rebuild assignments history, the cap
/// state and exactly-once attribution after a restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSnapshot {
    pub plan: InterventionPlan,
    pub ticks: Vec<TickReport>,
    pub rewards: Vec<RewardRecord>,
}

impl ExperimentRun {
    pub fn snapshot(&self) -> RunSnapshot {
        RunSnapshot {
            plan: self.plan.clone(),
            ticks: self.ticks.clone(),
            rewards: self.rewards.clone(),
        }
    }

    /// Replays recorded ticks. Adaptive policies restart from their priors
    /// since decision contexts are not persisted.
    fn restore(snap: RunSnapshot, log: &EventLog, registry: &TraitRegistry) -> Self {
        let mut run = ExperimentRun::new(snap.plan);
        let arm_index = |run: &ExperimentRun, arm_id: u32| {
            run.plan.experiment.arms.iter().position(|a| a.arm_id == arm_id).unwrap_or(TREATMENT)
        };
        let first_active = snap
            .ticks
            .iter()
            .find(|t| !t.decisions.is_empty() || !t.withheld.is_empty())
            .map(|t| t.day);
        for t in &snap.ticks {
            for d in &t.decisions {
                let idx = arm_index(&run, d.arm_id);
                let nudge = NudgeRecord {
                    nudge_id: d.nudge_id.clone(),
                    subject_id: d.subject_id.clone(),
                    experiment_id: t.experiment_id.clone(),
                    arm_id: d.arm_id,
                    content_ref: run.plan.experiment.arms[idx].content_ref.clone(),
                    sent_at_ms: day_start_ms(t.day),
                    reaction: Reaction::Pending,
                    reaction_at_ms: None,
                };
                run.sent_days.entry(d.subject_id.clone()).or_default().push(t.day);
                run.arm_history.entry(d.subject_id.clone()).or_default().push((t.day, idx));
                run.sent.insert(d.nudge_id.clone(), SentNudge { nudge, day: t.day, arm_index: idx, decision: None });
                run.nudge_counter += 1;
            }
            for s in &t.withheld {
                run.arm_history.entry(s.clone()).or_default().push((t.day, CONTROL));
            }
        }
        if let Some(day) = first_active {
            run.binding = run.build_binding(log, registry, day).ok();
        }
        run.attributed = snap.rewards.iter().map(|r| r.nudge_id.clone()).collect();
        run.rewards = snap.rewards;
        run.ticks = snap.ticks;
        run
    }
}

/// All experiments known to the platform, keyed by id.
#[derive(Debug, Clone, Default)]
pub struct Orchestrator {
    runs: BTreeMap<String, ExperimentRun>,
}

impl Orchestrator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create(&mut self, plan: InterventionPlan, registry: &TraitRegistry) -> Result<&ExperimentRun, OrchestratorError> {
        plan.validate(registry)?;
        let id = plan.experiment.experiment_id.clone();
        if self.runs.contains_key(&id) {
            return Err(OrchestratorError::DuplicateExperiment(id));
        }
        Ok(self.runs.entry(id).or_insert(ExperimentRun::new(plan)))
    }

    pub fn get(&self, id: &str) -> Result<&ExperimentRun, OrchestratorError> {
        self.runs.get(id).ok_or_else(|| OrchestratorError::UnknownExperiment(id.to_string()))
    }

    fn get_mut(&mut self, id: &str) -> Result<&mut ExperimentRun, OrchestratorError> {
        self.runs.get_mut(id).ok_or_else(|| OrchestratorError::UnknownExperiment(id.to_string()))
    }

    pub fn runs(&self) -> impl Iterator<Item = &ExperimentRun> {
        self.runs.values()
    }

    pub fn snapshots(&self) -> Vec<RunSnapshot> {
        self.runs.values().map(ExperimentRun::snapshot).collect()
    }

    pub fn restore(snapshots: Vec<RunSnapshot>, log: &EventLog, registry: &TraitRegistry) -> Self {
        let runs = snapshots
            .into_iter()
            .map(|s| (s.plan.experiment.experiment_id.clone(), ExperimentRun::restore(s, log, registry)))
            .collect();
        Orchestrator { runs }
    }

    pub fn control(&mut self, id: &str, action: ControlAction) -> Result<ExperimentStatus, OrchestratorError> {
        let run = self.get_mut(id)?;
        let next = run.plan.experiment.status.apply(action)?;
        run.plan.experiment.status = next;
        Ok(next)
    }

    pub fn tick(
        &mut self,
        id: &str,
        log: &EventLog,
        registry: &TraitRegistry,
        day: i64,
    ) -> Result<(TickReport, Vec<NudgeRecord>), OrchestratorError> {
        self.get_mut(id)?.tick(log, registry, day)
    }

    /// Ticks every running or paused experiment whose window contains `day`.
    pub fn tick_all(
        &mut self,
        log: &EventLog,
        registry: &TraitRegistry,
        day: i64,
    ) -> Result<Vec<(TickReport, Vec<NudgeRecord>)>, OrchestratorError> {
        let mut out = Vec::new();
        for run in self.runs.values_mut() {
            let exp = &run.plan.experiment;
            let active = matches!(exp.status, ExperimentStatus::Running | ExperimentStatus::Paused);
            if active && (exp.start_day..=exp.end_day).contains(&day) {
                out.push(run.tick(log, registry, day)?);
            }
        }
        Ok(out)
    }

    /// Attributes each nudge whose reward window has closed by `day`, exactly
    /// once, and feeds adaptive policies.
    pub fn attribute_rewards(&mut self, id: &str, log: &EventLog, day: i64) -> Result<Vec<RewardRecord>, OrchestratorError> {
        self.get_mut(id)?.attribute_rewards(log, day)
    }

    pub fn attribute_all(&mut self, log: &EventLog, day: i64) -> Result<Vec<RewardRecord>, OrchestratorError> {
        let mut out = Vec::new();
        for run in self.runs.values_mut() {
            out.extend(run.attribute_rewards(log, day)?);
        }
        Ok(out)
    }

    pub fn monitor(&self, id: &str, log: &EventLog, from_day: i64, to_day: i64) -> Result<MonitorPayload, OrchestratorError> {
        monitor::monitor(self.get(id)?, log, from_day, to_day)
    }
}

/// Days on which `subject` reacted with an open or view to one of the
/// experiment's nudges.
pub(crate) fn interaction_days(log: &EventLog, experiment_id: &str) -> BTreeMap<i64, BTreeSet<SubjectId>> {
    let mut out: BTreeMap<i64, BTreeSet<SubjectId>> = BTreeMap::new();
    for r in log.reactions() {
        if r.experiment_id.as_deref() == Some(experiment_id) && matches!(r.kind, Reaction::Opened | Reaction::Viewed) {
            out.entry(day_of(r.timestamp_ms)).or_default().insert(r.subject_id.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests;
