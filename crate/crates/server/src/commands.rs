//! Offline commands: replay a data directory, report on an experiment, run
//! or calibrate a simulated scenario.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};

use nudgeforge_core::experiment::flag_significance;
use nudgeforge_core::platform::Platform;
use nudgeforge_core::simulator::{calibrate_effect_delta, run, ScenarioConfig};

pub fn load_scenario(path: Option<&Path>) -> Result<ScenarioConfig> {
    match path {
        None => Ok(ScenarioConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(ScenarioConfig::parse(&text)?)
        }
    }
}

/// Rebuilds the platform from `data_dir` and summarizes what it holds.
pub fn replay(data_dir: &Path, segment_lines: usize) -> Result<Value> {
    if !data_dir.is_dir() {
        bail!("{} is not a directory", data_dir.display());
    }
    let platform = Platform::open(data_dir, segment_lines)?;
    let log = platform.log();
    let mut devices: BTreeMap<&str, u64> = BTreeMap::new();
    for e in log.events() {
        devices.entry(e.device_id.as_str()).or_insert_with(|| log.watermark(&e.device_id));
    }
    let experiments: Vec<Value> = platform
        .orchestrator()
        .runs()
        .map(|r| {
            json!({
                "experiment_id": r.plan.experiment.experiment_id,
                "status": r.status(),
                "ticks": r.ticks().len(),
                "rewards": r.rewards().len(),
            })
        })
        .collect();
    Ok(json!({
        "events": log.len(),
        "subjects": log.subjects().count(),
        "device_watermarks": devices,
        "experiments": experiments,
    }))
}

/// Status, daily estimates and policy state of one experiment. The daily
/// table spans `from_day..=to_day` (defaults: the ticked range).
pub fn report(data_dir: &Path, segment_lines: usize, id: &str, from_day: Option<i64>, to_day: Option<i64>) -> Result<String> {
    let platform = Platform::open(data_dir, segment_lines)?;
    let run = platform.experiment(id)?;
    let exp = &run.plan.experiment;
    let mut out = String::new();
    writeln!(out, "experiment {} ({})", exp.experiment_id, exp.status)?;
    writeln!(out, "window: days {}..={}; metric {}", exp.start_day, exp.end_day, exp.metric.name)?;
    writeln!(
        out,
        "ticks {}; nudges {}; rewards attributed {}",
        run.ticks().len(),
        run.nudges().count(),
        run.rewards().len()
    )?;
    let last = run.ticks().last().map(|t| t.day - exp.start_day);
    if let Some(last) = last {
        let from = from_day.unwrap_or(0);
        let to = to_day.unwrap_or(last);
        let payload = platform.monitor(id, from, to)?;
        writeln!(out, "\n{:>5} {:>9} {:>9} {:>9} {:>5} {:>5} {:>6}  sig", "day", "diff", "ci_low", "ci_high", "n_t", "n_c", "inter")?;
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
        for e in &payload.estimates {
            writeln!(
                out,
                "{:>5} {:>9} {:>9} {:>9} {:>5} {:>5} {:>6}  {}",
                e.day,
                fmt(e.diff),
                fmt(e.ci_low),
                fmt(e.ci_high),
                e.n_t,
                e.n_c,
                e.interactions,
                if flag_significance(e) { "*" } else { "" }
            )?;
        }
    }
    if let Some(state) = run.policy_state_text() {
        writeln!(out, "\npolicy state:\n{state}")?;
    }
    Ok(out)
}

/// Runs a scenario and writes its artifacts under `out_dir`.
pub fn simulate(mut config: ScenarioConfig, seed: Option<u64>, days: Option<u32>, out_dir: &Path) -> Result<Value> {
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(d) = days {
        config.days = d;
    }
    let output = run(&config)?;
    output.write_to(out_dir)?;
    let significant: Vec<i64> = output
        .monitor
        .iter()
        .flat_map(|m| m.estimates.iter())
        .filter(|e| flag_significance(e))
        .map(|e| e.day)
        .collect();
    Ok(json!({
        "out": out_dir.display().to_string(),
        "events": output.platform.log().len(),
        "generated_events": output.truth.total_generated(),
        "ticks": output.ticks.len(),
        "significant_days": significant,
    }))
}

/// Finds the `effect_delta` whose mean true effect over `from..=to` hits
/// `target`.
pub fn calibrate(config: &ScenarioConfig, target: f64, from: i64, to: i64, tol: f64) -> Result<Value> {
    let c = calibrate_effect_delta(config, target, from, to, tol)?;
    Ok(json!({ "effect_delta": c.effect_delta, "achieved": c.achieved, "target": target, "from_day": from, "to_day": to }))
}
