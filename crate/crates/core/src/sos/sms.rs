use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use thiserror::Error;

pub const SMS_OUTBOX_FILE: &str = "sms-outbox.log";

#[derive(Debug, Error)]
pub enum SmsError {
    #[error("gateway rejected message to {0}")]
    Rejected(String),
    #[error("gateway i/o: {0}")]
    Io(#[from] io::Error),
}

/// Outbound text-message port. Returns the gateway's message id.
pub trait SmsGateway: Send + Sync {
    fn send(&self, number: &str, body: &str, now_ms: u64) -> Result<String, SmsError>;
}

/// Appends `<iso8601>\t<number>\t<body>` per accepted message to
/// `sms-outbox.log`.
///
/// A failure fraction `f` in `[0, 1]` makes the gateway reject the `n`-th
/// send (0-based) whenever `floor((n + 1) f) > floor(n f)`, so exactly
/// `floor(N f)` of the first `N` sends fail, deterministically. Rejected
/// messages are not written.
pub struct OutboxSmsGateway {
    path: PathBuf,
    state: Mutex<GatewayState>,
    fail_fraction: f64,
}

struct GatewayState {
    file: File,
    attempts: u64,
}

impl OutboxSmsGateway {
    pub fn open(dir: &Path, fail_fraction: f64) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(SMS_OUTBOX_FILE);
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            state: Mutex::new(GatewayState { file, attempts: 0 }),
            fail_fraction: fail_fraction.clamp(0.0, 1.0),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl SmsGateway for OutboxSmsGateway {
    fn send(&self, number: &str, body: &str, now_ms: u64) -> Result<String, SmsError> {
        let mut state = self.state.lock();
        let n = state.attempts;
        state.attempts += 1;
        let f = self.fail_fraction;
        if ((n + 1) as f64 * f).floor() > (n as f64 * f).floor() {
            return Err(SmsError::Rejected(number.to_string()));
        }
        let clean = |s: &str| s.replace(['\t', '\n', '\r'], " ");
        writeln!(
            state.file,
            "{}\t{}\t{}",
            crate::time::iso8601(now_ms),
            clean(number),
            clean(body)
        )?;
        state.file.flush()?;
        Ok(format!("sms-{now_ms}-{n}"))
    }
}
