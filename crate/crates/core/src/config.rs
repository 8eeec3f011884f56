//! Process-level configuration, normally read from the environment.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

pub const MODE_VAR: &str = "RR_CHANNEL_MODE";
pub const RECORD_FILE_VAR: &str = "RR_RECORD_FILE";
pub const DESYNC_MODE_VAR: &str = "RR_DESYNC_MODE";
pub const DESYNC_TIMEOUT_VAR: &str = "RR_DESYNC_TIMEOUT_MS";

pub const DEFAULT_RECORD_FILE: &str = "lwrr.log";
pub const DEFAULT_DESYNC_TIMEOUT: Duration = Duration::from_millis(1000);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RrMode {
    /// Plain passthrough to the underlying channel.
    #[default]
    Noop,
    Record,
    Replay,
}

/// What to do once replay has diverged from the log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DesyncPolicy {
    /// Report and exit the process with [`crate::DESYNC_EXIT_CODE`].
    ErrorOut,
    /// Report once and continue executing natively.
    #[default]
    KeepGoing,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("{var}: unknown value {value:?} (expected one of {expected})")]
    BadValue {
        var: &'static str,
        value: String,
        expected: &'static str,
    },
}

impl FromStr for RrMode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "noop" => Ok(RrMode::Noop),
            "record" => Ok(RrMode::Record),
            "replay" => Ok(RrMode::Replay),
            _ => Err(ConfigError::BadValue {
                var: MODE_VAR,
                value: s.to_string(),
                expected: "noop, record, replay",
            }),
        }
    }
}

impl fmt::Display for RrMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RrMode::Noop => "noop",
            RrMode::Record => "record",
            RrMode::Replay => "replay",
        })
    }
}

impl FromStr for DesyncPolicy {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "error" => Ok(DesyncPolicy::ErrorOut),
            "keep_going" => Ok(DesyncPolicy::KeepGoing),
            _ => Err(ConfigError::BadValue {
                var: DESYNC_MODE_VAR,
                value: s.to_string(),
                expected: "error, keep_going",
            }),
        }
    }
}

impl fmt::Display for DesyncPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DesyncPolicy::ErrorOut => "error",
            DesyncPolicy::KeepGoing => "keep_going",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Config {
    pub mode: RrMode,
    pub desync_policy: DesyncPolicy,
    /// Longest a replayed receive waits for the logged sender.
    pub desync_timeout: Duration,
    /// Log written at teardown in record mode, read at startup in replay.
    pub record_file: PathBuf,
    /// Keep a per-operation trace of replayed vs. native execution.
    pub trace_ops: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            mode: RrMode::Noop,
            desync_policy: DesyncPolicy::KeepGoing,
            desync_timeout: DEFAULT_DESYNC_TIMEOUT,
            record_file: PathBuf::from(DEFAULT_RECORD_FILE),
            trace_ops: false,
        }
    }
}

impl Config {
    pub fn with_mode(mode: RrMode) -> Self {
        Config {
            mode,
            ..Config::default()
        }
    }

    pub fn from_env() -> Result<Self, ConfigError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    /// Builds a config from an arbitrary variable source. Unset or empty
    /// variables take their defaults.
    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let get = |k: &str| lookup(k).filter(|v| !v.trim().is_empty());
        let mut config = Config::default();
        if let Some(v) = get(MODE_VAR) {
            config.mode = v.parse()?;
        }
        if let Some(v) = get(DESYNC_MODE_VAR) {
            config.desync_policy = v.parse()?;
        }
        if let Some(v) = get(RECORD_FILE_VAR) {
            config.record_file = PathBuf::from(v);
        }
        if let Some(v) = get(DESYNC_TIMEOUT_VAR) {
            let ms =
                v.trim()
                    .parse::<u64>()
                    .ok()
                    .filter(|ms| *ms > 0)
                    .ok_or(ConfigError::BadValue {
                        var: DESYNC_TIMEOUT_VAR,
                        value: v.clone(),
                        expected: "a positive integer",
                    })?;
            config.desync_timeout = Duration::from_millis(ms);
        }
        Ok(config)
    }
}
