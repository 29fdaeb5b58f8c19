use super::*;
use crate::data_model::{SchemaCatalog, Stream};
use crate::experiment::{ArmSpec, ExperimentDef};
use crate::platform::{CohortDefinition, MetricDefinition};
use crate::sdk::{DeviceBuffer, EventDraft};

struct Fixture {
    log: EventLog,
    registry: TraitRegistry,
    catalog: SchemaCatalog,
    devices: BTreeMap<String, DeviceBuffer>,
}

fn subject(i: usize) -> SubjectId {
    SubjectId::new(format!("subject-{i:02}x")).unwrap()
}

impl Fixture {
    fn new(n: usize) -> Self {
        let catalog = SchemaCatalog::starter();
        let mut f = Fixture {
            log: EventLog::in_memory(catalog.clone()),
            registry: TraitRegistry::with_builtins(),
            catalog,
            devices: BTreeMap::new(),
        };
        for i in 0..n {
            f.devices.insert(format!("dev-{i:02}"), DeviceBuffer::new(&format!("dev-{i:02}")));
            f.event(i, EventDraft::new(subject(i), Stream::Core, "app_open", day_start_ms(-1) + 1000));
        }
        f.sync();
        f
    }

    fn device(&mut self, i: usize) -> &mut DeviceBuffer {
        self.devices.get_mut(&format!("dev-{i:02}")).unwrap()
    }

    fn event(&mut self, i: usize, draft: EventDraft) {
        let c = self.catalog.clone();
        self.device(i).log_event(draft, &c).unwrap();
    }

    fn order(&mut self, i: usize, day: i64, sku: &str) {
        self.event(
            i,
            EventDraft::new(subject(i), Stream::Ecommerce, "order_placed", day_start_ms(day) + 3_600_000)
                .with("sku", sku)
                .with("qty", 1.0),
        );
    }

    fn sync(&mut self) {
        for dev in self.devices.values_mut() {
            for b in dev.drain_batches(1000) {
                let ack = self.log.ingest_batch(&b).unwrap();
                dev.apply_ack(&ack).unwrap();
            }
        }
    }

    fn deliver(&mut self, nudges: &[NudgeRecord], reaction: Option<Reaction>, at_ms: i64) {
        let c = self.catalog.clone();
        for n in nudges {
            let i: usize = n.subject_id.as_str()[8..10].parse().unwrap();
            let dev = self.device(i);
            dev.receive_nudges(vec![n.clone()], at_ms, &c).unwrap();
            if let Some(r) = reaction {
                dev.record_reaction(&n.nudge_id, r, at_ms + 1, &c).unwrap();
            }
        }
        self.sync();
    }
}

fn def(design: Design) -> ExperimentDef {
    ExperimentDef {
        experiment_id: "exp".into(),
        cohort: CohortDefinition::everyone(),
        arms: vec![
            ArmSpec { arm_id: 0, content_ref: "none".into() },
            ArmSpec { arm_id: 1, content_ref: "tip".into() },
        ],
        design,
        metric: MetricDefinition::weekly_variety_mean(),
        cadence_days: 7,
        start_day: 0,
        end_day: 40,
        seed: 4,
        status: ExperimentStatus::Draft,
    }
}

fn started(plan: InterventionPlan, f: &Fixture) -> Orchestrator {
    let mut o = Orchestrator::new();
    o.create(plan, &f.registry).unwrap();
    o.control("exp", ControlAction::Start).unwrap();
    o
}

#[test]
fn nudge_ids_use_letters() {
    assert_eq!(letters(0), "a");
    assert_eq!(letters(25), "z");
    assert_eq!(letters(26), "aa");
    assert_eq!(letters(27), "ab");
    assert_eq!(letters(26 * 27), "aaa");
}

#[test]
fn status_gates() {
    let f = Fixture::new(4);
    let mut o = Orchestrator::new();
    o.create(InterventionPlan::new(def(Design::FixedAb { ratio: 0.5 })), &f.registry).unwrap();
    assert_eq!(
        o.tick("exp", &f.log, &f.registry, 0).unwrap_err(),
        OrchestratorError::ExperimentNotRunning(ExperimentStatus::Draft)
    );
    assert_eq!(o.control("exp", ControlAction::Start), Ok(ExperimentStatus::Running));
    assert_eq!(o.control("exp", ControlAction::Pause), Ok(ExperimentStatus::Paused));
    let (r, nudges) = o.tick("exp", &f.log, &f.registry, 0).unwrap();
    assert!(r.decisions.is_empty() && nudges.is_empty());
    assert_eq!(r.skipped.len(), 4);
    assert!(r.skipped.iter().all(|(_, why)| *why == SkipReason::Paused));
    assert_eq!(o.control("exp", ControlAction::Resume), Ok(ExperimentStatus::Running));
    assert!(matches!(o.tick("exp", &f.log, &f.registry, 41), Err(OrchestratorError::OutsideWindow { .. })));
    assert_eq!(o.control("exp", ControlAction::Stop), Ok(ExperimentStatus::Stopped));
    assert!(matches!(o.control("exp", ControlAction::Resume), Err(OrchestratorError::IllegalTransition(_))));
    assert!(o.tick("exp", &f.log, &f.registry, 1).is_err());
    assert!(matches!(
        o.create(InterventionPlan::new(def(Design::FixedAb { ratio: 0.5 })), &f.registry),
        Err(OrchestratorError::DuplicateExperiment(_))
    ));
}

#[test]
fn control_never_nudged_and_cap_holds() {
    let f = Fixture::new(10);
    let mut o = started(InterventionPlan::new(def(Design::FixedAb { ratio: 0.5 })), &f);
    let (r0, n0) = o.tick("exp", &f.log, &f.registry, 0).unwrap();
    assert_eq!(r0.decisions.len(), 5);
    assert_eq!(r0.withheld.len(), 5);
    assert_eq!(n0.len(), 5);
    let table = o.get("exp").unwrap().assignment().unwrap().clone();
    for d in &r0.decisions {
        assert_eq!(table.arm_of(&d.subject_id), Some(TREATMENT));
        assert_eq!(d.propensity, Some(1.0));
    }
    let (r3, _) = o.tick("exp", &f.log, &f.registry, 3).unwrap();
    assert!(r3.decisions.is_empty());
    assert_eq!(r3.skipped.iter().filter(|(_, w)| *w == SkipReason::Capped).count(), 5);
    let (r7, _) = o.tick("exp", &f.log, &f.registry, 7).unwrap();
    assert_eq!(r7.decisions.len(), 5);
    for r in [&r0, &r3, &r7] {
        let decided: BTreeSet<_> = r.decisions.iter().map(|d| &d.subject_id).collect();
        assert!(r.skipped.iter().all(|(s, _)| !decided.contains(s)));
    }
}

#[test]
fn reaction_rewards_exactly_once() {
    let mut f = Fixture::new(6);
    let mut plan = InterventionPlan::new(def(Design::FixedAb { ratio: 0.5 }));
    plan.reward = Some(RewardSpec { metric: MetricDefinition::weekly_variety_mean(), window_days: 3, mode: RewardMode::Reaction });
    let mut o = started(plan, &f);
    let (_, nudges) = o.tick("exp", &f.log, &f.registry, 0).unwrap();
    f.deliver(&nudges[..1], Some(Reaction::Opened), day_start_ms(0) + 5);
    f.deliver(&nudges[1..2], Some(Reaction::Blocked), day_start_ms(0) + 5);
    f.deliver(&nudges[2..], None, day_start_ms(0) + 5);
    assert!(o.attribute_rewards("exp", &f.log, 2).unwrap().is_empty());
    let got = o.attribute_rewards("exp", &f.log, 3).unwrap();
    let by_id: BTreeMap<_, _> = got.iter().map(|r| (r.nudge_id.clone(), r.reward)).collect();
    assert_eq!(by_id[&nudges[0].nudge_id], 1.0);
    assert_eq!(by_id[&nudges[1].nudge_id], -1.0);
    assert_eq!(by_id[&nudges[2].nudge_id], 0.0);
    assert_eq!(got.len(), 3);
    assert!(o.attribute_rewards("exp", &f.log, 10).unwrap().is_empty());
    assert_eq!(o.get("exp").unwrap().rewards().len(), 3);
}

#[test]
fn delta_reward_is_metric_change() {
    let mut f = Fixture::new(2);
    for (k, sku) in ["SKU001", "SKU002", "SKU003"].iter().enumerate() {
        f.order(0, -3 + k as i64, sku);
        f.order(1, -3 + k as i64, sku);
    }
    f.sync();
    let mut plan = InterventionPlan::new(def(Design::FixedAb { ratio: 0.5 }));
    plan.reward = Some(RewardSpec { metric: MetricDefinition::weekly_variety_mean(), window_days: 2, mode: RewardMode::Delta });
    let mut o = started(plan, &f);
    let (_, nudges) = o.tick("exp", &f.log, &f.registry, 0).unwrap();
    assert_eq!(nudges.len(), 1);
    let i: usize = nudges[0].subject_id.as_str()[8..10].parse().unwrap();
    f.order(i, 0, "SKU004");
    f.order(i, 1, "SKU005");
    f.sync();
    let got = o.attribute_rewards("exp", &f.log, 2).unwrap();
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].reward, 2.0);
}

#[test]
fn adaptive_updates_only_emitted_decisions() {
    let mut f = Fixture::new(8);
    let mut plan = InterventionPlan::new(def(Design::Adaptive { policy: PolicyKind::Thompson }));
    plan.context_traits = vec!["app_opens_last_7d".into()];
    plan.reward = Some(RewardSpec { metric: MetricDefinition::weekly_variety_mean(), window_days: 1, mode: RewardMode::Reaction });
    let mut o = started(plan, &f);
    let (r, nudges) = o.tick("exp", &f.log, &f.registry, 0).unwrap();
    assert_eq!(r.decisions.len(), 8);
    for d in &r.decisions {
        let p = d.propensity.unwrap();
        assert!(p > 0.0 && p <= 1.0);
    }
    f.deliver(&nudges, Some(Reaction::Opened), day_start_ms(0) + 5);
    let rewards = o.attribute_rewards("exp", &f.log, 1).unwrap();
    let emitted: BTreeSet<_> = r.decisions.iter().map(|d| d.nudge_id.clone()).collect();
    assert_eq!(rewards.iter().map(|r| r.nudge_id.clone()).collect::<BTreeSet<_>>(), emitted);
    let mon = o.monitor("exp", &f.log, 0, 1).unwrap();
    assert_eq!(mon.estimates.len(), 2);
    assert_eq!(mon.estimates[0].interactions, 8);
    let state = o.get("exp").unwrap().policy_state_text().unwrap();
    assert_eq!(TsState::from_kv_text(&state).unwrap().dim, 2);
}

#[test]
fn policy_state_only_for_adaptive_runs() {
    let f = Fixture::new(4);
    let mut o = started(InterventionPlan::new(def(Design::FixedAb { ratio: 0.5 })), &f);
    o.tick("exp", &f.log, &f.registry, 0).unwrap();
    assert!(o.get("exp").unwrap().policy_state_text().is_none());
}

#[test]
fn micro_randomized_treats_on_decision_points() {
    let f = Fixture::new(20);
    let plan = InterventionPlan::new(def(Design::MicroRandomized { prob: 0.5, decision_points: vec![0, 14] }));
    let mut o = started(plan, &f);
    let (r0, _) = o.tick("exp", &f.log, &f.registry, 0).unwrap();
    assert_eq!(r0.decisions.len() + r0.withheld.len(), 20);
    let (r1, _) = o.tick("exp", &f.log, &f.registry, 1).unwrap();
    assert!(r1.decisions.is_empty() && r1.withheld.is_empty());
}

#[test]
fn plan_json_accepts_bare_experiment() {
    let v = serde_json::to_value(def(Design::FixedAb { ratio: 0.5 })).unwrap();
    let plan: InterventionPlan = serde_json::from_value(v).unwrap();
    assert_eq!(plan.frequency_cap, 1);
    assert_eq!(plan.content, ContentStrategy::Static);
    assert_eq!(plan.reward_spec().mode, RewardMode::Delta);
    let back: InterventionPlan = serde_json::from_value(serde_json::to_value(&plan).unwrap()).unwrap();
    assert_eq!(back, plan);
}

#[test]
fn restore_keeps_cap_and_attribution() {
    let mut f = Fixture::new(6);
    let mut plan = InterventionPlan::new(def(Design::FixedAb { ratio: 0.5 }));
    plan.reward = Some(RewardSpec { metric: MetricDefinition::weekly_variety_mean(), window_days: 1, mode: RewardMode::Reaction });
    let mut o = started(plan, &f);
    let (_, nudges) = o.tick("exp", &f.log, &f.registry, 0).unwrap();
    f.deliver(&nudges, Some(Reaction::Opened), day_start_ms(0) + 5);
    o.attribute_rewards("exp", &f.log, 1).unwrap();
    let (_, n2) = o.tick("exp", &f.log, &f.registry, 7).unwrap();

    let snaps = o.snapshots();
    let json = serde_json::to_string(&snaps).unwrap();
    let mut r = Orchestrator::restore(serde_json::from_str(&json).unwrap(), &f.log, &f.registry);
    assert_eq!(r.get("exp").unwrap().assignment(), o.get("exp").unwrap().assignment());
    let (t, _) = r.tick("exp", &f.log, &f.registry, 9).unwrap();
    assert!(t.decisions.is_empty());
    assert!(r.attribute_rewards("exp", &f.log, 5).unwrap().is_empty());
    let late = r.attribute_rewards("exp", &f.log, 8).unwrap();
    assert_eq!(late.len(), n2.len());
    let (t14, n14) = r.tick("exp", &f.log, &f.registry, 14).unwrap();
    assert_eq!(t14.decisions.len(), 3);
    let old: BTreeSet<_> = nudges.iter().chain(&n2).map(|n| n.nudge_id.clone()).collect();
    assert!(n14.iter().all(|n| !old.contains(&n.nudge_id)));
    assert_eq!(
        r.monitor("exp", &f.log, 0, 14).unwrap(),
        o.monitor("exp", &f.log, 0, 14).unwrap()
    );
}
