use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;

use crate::auth::AuthConfig;
use crate::chat::{ChatConfig, DEFAULT_CHECKPOINTS};
use crate::notify::NotifyConfig;

pub const CONFIG_ENV: &str = "SAFEGUARD_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for {key}: {reason}")]
    BadValue {
        line: usize,
        key: String,
        reason: String,
    },
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Where an outbound port sends its traffic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SinkMode {
    /// Append to the audit log under `<data_dir>/outbox/`.
    Outbox,
    /// Accept and drop.
    Discard,
}

impl FromStr for SinkMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "outbox" => Ok(SinkMode::Outbox),
            "discard" => Ok(SinkMode::Discard),
            other => Err(format!("expected outbox or discard, got {other:?}")),
        }
    }
}

/// Service settings, read from a flat `key = value` file.
///
/// ```text
/// bind = 127.0.0.1:8080
/// data_dir = /var/lib/safeguard
/// session_ttl_secs = 604800
/// checkpoints = login,chat-open,profile-open
/// ```
#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub data_dir: PathBuf,
    pub static_dir: Option<PathBuf>,
    pub session_ttl_secs: i64,
    pub verification_ttl_secs: i64,
    pub password_iterations: u32,
    pub activity_threshold_secs: i64,
    pub checkpoints: Vec<String>,
    pub nearby_k: usize,
    pub nearby_radius_m: f64,
    pub grid_cell_deg: f64,
    pub sms_mode: SinkMode,
    pub sms_fail_fraction: f64,
    pub push_mode: SinkMode,
    pub pending_ttl_secs: i64,
    pub sweep_interval: Duration,
    pub snapshot_interval: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        let auth = AuthConfig::default();
        let notify = NotifyConfig::default();
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: PathBuf::from("safeguard-data"),
            static_dir: None,
            session_ttl_secs: auth.session_ttl_secs,
            verification_ttl_secs: auth.verification_ttl_secs,
            password_iterations: auth.password_iterations,
            activity_threshold_secs: ChatConfig::default().activity_threshold_secs,
            checkpoints: DEFAULT_CHECKPOINTS.iter().map(|s| s.to_string()).collect(),
            nearby_k: 10,
            nearby_radius_m: 5_000.0,
            grid_cell_deg: crate::geo::DEFAULT_CELL_DEG,
            sms_mode: SinkMode::Outbox,
            sms_fail_fraction: 0.0,
            push_mode: SinkMode::Outbox,
            pending_ttl_secs: notify.pending_ttl_secs,
            sweep_interval: notify.sweep_interval,
            snapshot_interval: Duration::from_secs(30),
        }
    }
}

fn parse<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        line,
        key: key.to_string(),
        reason: e.to_string(),
    })
}

impl ServiceConfig {
    /// Parses config text over the defaults. `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "bind" => c.bind = parse(line, key, value)?,
                "data_dir" => c.data_dir = PathBuf::from(value),
                "static_dir" => c.static_dir = Some(PathBuf::from(value)),
                "session_ttl_secs" => c.session_ttl_secs = parse(line, key, value)?,
                "verification_ttl_secs" => c.verification_ttl_secs = parse(line, key, value)?,
                "password_iterations" => c.password_iterations = parse(line, key, value)?,
                "activity_threshold_secs" => c.activity_threshold_secs = parse(line, key, value)?,
                "checkpoints" => {
                    c.checkpoints = value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(str::to_string)
                        .collect()
                }
                "nearby_k" => c.nearby_k = parse(line, key, value)?,
                "nearby_radius_m" => c.nearby_radius_m = parse(line, key, value)?,
                "grid_cell_deg" => c.grid_cell_deg = parse(line, key, value)?,
                "sms_mode" => c.sms_mode = parse(line, key, value)?,
                "sms_fail_fraction" => c.sms_fail_fraction = parse(line, key, value)?,
                "push_mode" => c.push_mode = parse(line, key, value)?,
                "pending_ttl_secs" => c.pending_ttl_secs = parse(line, key, value)?,
                "sweep_interval_ms" => {
                    c.sweep_interval = Duration::from_millis(parse(line, key, value)?)
                }
                "snapshot_interval_secs" => {
                    c.snapshot_interval = Duration::from_secs(parse(line, key, value)?)
                }
                _ => {
                    return Err(ConfigError::UnknownKey {
                        line,
                        key: key.to_string(),
                    })
                }
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Reads the file named by `SAFEGUARD_CONFIG`, or defaults when unset.
    pub fn from_env() -> Result<Self, ConfigError> {
        match std::env::var_os(CONFIG_ENV) {
            Some(path) => Self::load(Path::new(&path)),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let checks: [(&'static str, bool); 9] = [
            ("session_ttl_secs", self.session_ttl_secs > 0),
            ("verification_ttl_secs", self.verification_ttl_secs > 0),
            ("activity_threshold_secs", self.activity_threshold_secs > 0),
            ("nearby_k", self.nearby_k > 0),
            ("nearby_radius_m", self.nearby_radius_m > 0.0),
            ("pending_ttl_secs", self.pending_ttl_secs > 0),
            ("sweep_interval_ms", !self.sweep_interval.is_zero()),
            ("snapshot_interval_secs", !self.snapshot_interval.is_zero()),
            ("checkpoints", !self.checkpoints.is_empty()),
        ];
        for (name, ok) in checks {
            if !ok {
                return Err(ConfigError::NotPositive(name));
            }
        }
        Ok(())
    }

    pub fn outbox_dir(&self) -> PathBuf {
        self.data_dir.join("outbox")
    }

    pub fn snapshot_file(&self) -> PathBuf {
        self.data_dir.join("tree.snapshot")
    }

    pub fn pois_file(&self) -> PathBuf {
        self.data_dir.join("pois.csv")
    }

    pub fn auth_config(&self) -> AuthConfig {
        AuthConfig {
            verification_ttl_secs: self.verification_ttl_secs,
            session_ttl_secs: self.session_ttl_secs,
            password_iterations: self.password_iterations,
        }
    }

    pub fn chat_config(&self) -> ChatConfig {
        ChatConfig {
            activity_threshold_secs: self.activity_threshold_secs,
            checkpoints: self.checkpoints.clone(),
        }
    }

    pub fn notify_config(&self) -> NotifyConfig {
        NotifyConfig {
            pending_ttl_secs: self.pending_ttl_secs,
            sweep_interval: self.sweep_interval,
        }
    }
}
