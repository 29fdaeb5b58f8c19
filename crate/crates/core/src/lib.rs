//! nudgeforge: an adaptive-intervention platform.
//!
//! Devices log schema-checked events through an offline-first [`sdk`]; the
//! [`platform`] ingests them idempotently into an append-only log and derives
//! traits, cohorts and metrics; [`experiment`] designs assign subjects and
//! monitor effects; [`bandit`] policies adapt decisions; the [`orchestrator`]
//! closes the loop on a daily tick; [`simulator`] drives all of it with a
//! deterministic synthetic pharmacy population.

pub mod bandit;
pub mod data_model;
pub mod kvtext;
pub mod models;
pub mod platform;
pub mod sdk;
pub mod experiment;
pub mod orchestrator;
pub mod simulator;
pub mod sweep;
