//! `serve` settings, read from a flat `key=value` file.
//!
//! ```text
//! bind=127.0.0.1:8080
//! api_token=change-me
//! segment_lines=100000
//! clock=wall
//! tick_interval_secs=60
//! ```

use std::net::SocketAddr;
use std::str::FromStr;

use nudgeforge_core::kvtext::{KvDoc, KvError};
use nudgeforge_core::platform::DEFAULT_SEGMENT_LINES;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("{0}")]
    Invalid(String),
}

/// How days advance while serving.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    /// The current UTC day drives ticks.
    Wall,
    /// Days advance only through `POST /v1/admin/tick`.
    Manual,
}

impl FromStr for ClockMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "wall" => Ok(ClockMode::Wall),
            "manual" => Ok(ClockMode::Manual),
            other => Err(format!("clock must be `wall` or `manual`, got `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    /// When set, every request needs `Authorization: Bearer <token>`.
    pub api_token: Option<String>,
    pub segment_lines: usize,
    pub clock: ClockMode,
    pub tick_interval_secs: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            api_token: None,
            segment_lines: DEFAULT_SEGMENT_LINES,
            clock: ClockMode::Wall,
            tick_interval_secs: 60,
        }
    }
}

const KEYS: [&str; 5] = ["bind", "api_token", "segment_lines", "clock", "tick_interval_secs"];

impl ServerConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let doc = KvDoc::parse(text)?;
        if let Some(k) = doc.keys().find(|k| !KEYS.contains(k) && *k != "format_version" && *k != "kind") {
            return Err(ConfigError::UnknownKey(k.to_string()));
        }
        let d = ServerConfig::default();
        let clock = match doc.raw("clock") {
            None => d.clock,
            Some(s) => s.parse().map_err(ConfigError::Invalid)?,
        };
        let cfg = ServerConfig {
            bind: doc.get_or("bind", d.bind)?,
            api_token: doc.raw("api_token").filter(|t| !t.is_empty()).map(str::to_string),
            segment_lines: doc.get_or("segment_lines", d.segment_lines)?,
            clock,
            tick_interval_secs: doc.get_or("tick_interval_secs", d.tick_interval_secs)?,
        };
        if cfg.segment_lines == 0 {
            return Err(ConfigError::Invalid("segment_lines must be positive".into()));
        }
        if cfg.tick_interval_secs == 0 {
            return Err(ConfigError::Invalid("tick_interval_secs must be positive".into()));
        }
        Ok(cfg)
    }
}
