//! HTTP server and command-line front end for the nudgeforge platform.

pub mod api;
pub mod commands;
pub mod config;

use std::time::{Duration, SystemTime, UNIX_EPOCH};

use nudgeforge_core::data_model::day_of;

pub use api::{router, AppState, Backend};
pub use config::{ClockMode, ServerConfig};

pub fn now_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as i64)
}

/// Ticks every day from the one after the last tick through `today`. With
/// no tick history, starts at `today`.
pub fn catch_up(state: &AppState, today: i64) -> Vec<String> {
    let mut backend = state.backend.write().unwrap_or_else(|e| e.into_inner());
    let first = backend.last_tick.map_or(today, |d| d + 1);
    let mut errors = Vec::new();
    for day in first..=today {
        match backend.advance(day) {
            Ok(reports) => tracing::info!(day, experiments = reports.len(), "ticked"),
            Err(e) => errors.push(format!("day {day}: {}", e.message)),
        }
    }
    errors
}

/// Follows the UTC wall clock, ticking each new day once.
pub async fn run_wall_clock(state: AppState, every: Duration) {
    let mut interval = tokio::time::interval(every);
    loop {
        interval.tick().await;
        for e in catch_up(&state, day_of(now_ms())) {
            tracing::warn!("tick failed: {e}");
        }
    }
}
