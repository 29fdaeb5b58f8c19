use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use nudgeforge::commands;
use nudgeforge::{router, run_wall_clock, AppState, ClockMode, ServerConfig};
use nudgeforge_core::platform::{Platform, DEFAULT_SEGMENT_LINES};

#[derive(Parser)]
#[command(name = "nudgeforge", version, about = "Adaptive-intervention platform server and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the HTTP/JSON API over a data directory.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data_dir: PathBuf,
    },
    /// Rebuild state from a data directory and print a summary.
    Replay {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEGMENT_LINES)]
        segment_lines: usize,
    },
    /// Print status, daily estimates and policy state for an experiment.
    Report {
        #[arg(long)]
        experiment: String,
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        #[arg(long)]
        from_day: Option<i64>,
        #[arg(long)]
        to_day: Option<i64>,
        #[arg(long, default_value_t = DEFAULT_SEGMENT_LINES)]
        segment_lines: usize,
    },
    /// Run a synthetic pharmacy scenario and write its artifacts.
    Simulate {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        days: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tune the scenario's effect size to a target mean true effect.
    Calibrate {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 5.0)]
        target: f64,
        #[arg(long, default_value_t = 7)]
        from_day: i64,
        #[arg(long, default_value_t = 14)]
        to_day: i64,
        #[arg(long, default_value_t = 0.02)]
        tolerance: f64,
    },
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_json(v: &serde_json::Value) {
    emit(&format!("{}\n", serde_json::to_string_pretty(v).expect("plain data serializes")));
}

async fn serve(config: Option<PathBuf>, data_dir: PathBuf) -> Result<()> {
    let cfg = match config {
        Some(p) => {
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            ServerConfig::parse(&text)?
        }
        None => ServerConfig::default(),
    };
    let platform = Platform::open(&data_dir, cfg.segment_lines)?;
    let state = AppState::new(platform, cfg.api_token.clone());
    if cfg.clock == ClockMode::Wall {
        tokio::spawn(run_wall_clock(state.clone(), Duration::from_secs(cfg.tick_interval_secs)));
    }
    let listener = tokio::net::TcpListener::bind(cfg.bind).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Serve { config, data_dir } => serve(config, data_dir).await?,
        Command::Replay { data_dir, segment_lines } => print_json(&commands::replay(&data_dir, segment_lines)?),
        Command::Report { experiment, data_dir, from_day, to_day, segment_lines } => {
            emit(&commands::report(&data_dir, segment_lines, &experiment, from_day, to_day)?)
        }
        Command::Simulate { scenario, seed, days, out } => {
            let cfg = commands::load_scenario(scenario.as_deref())?;
            print_json(&tokio::task::spawn_blocking(move || commands::simulate(cfg, seed, days, &out)).await??)
        }
        Command::Calibrate { scenario, target, from_day, to_day, tolerance } => {
            let cfg = commands::load_scenario(scenario.as_deref())?;
            print_json(&commands::calibrate(&cfg, target, from_day, to_day, tolerance)?)
        }
    }
    Ok(())
}
