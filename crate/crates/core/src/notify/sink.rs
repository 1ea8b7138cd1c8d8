use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use thiserror::Error;

use super::PendingNotification;

pub const PUSH_OUTBOX_FILE: &str = "push-outbox.log";

#[derive(Debug, Error)]
pub enum PushError {
    #[error("device token is no longer valid")]
    DeadToken,
    #[error("push sink i/o: {0}")]
    Io(#[from] io::Error),
}

/// Outbound push transport.
pub trait PushSink: Send + Sync {
    fn deliver(
        &self,
        token: &str,
        notification: &PendingNotification,
        now_ms: u64,
    ) -> Result<(), PushError>;
}

/// Appends `<iso8601>\t<device-token>\t<kind>\t<compact-payload>` to
/// `push-outbox.log`, the payload as single-line JSON.
pub struct OutboxPushSink {
    path: PathBuf,
    file: Mutex<File>,
}

impl OutboxPushSink {
    pub fn open(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(PUSH_OUTBOX_FILE);
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

pub fn outbox_line(token: &str, notification: &PendingNotification, now_ms: u64) -> String {
    let payload = serde_json::to_string(&notification.payload).unwrap_or_else(|_| "{}".into());
    format!(
        "{}\t{}\t{}\t{}",
        crate::time::iso8601(now_ms),
        token.replace(['\t', '\n', '\r'], " "),
        notification.kind.as_str(),
        payload
    )
}

impl PushSink for OutboxPushSink {
    fn deliver(
        &self,
        token: &str,
        notification: &PendingNotification,
        now_ms: u64,
    ) -> Result<(), PushError> {
        let mut file = self.file.lock();
        writeln!(file, "{}", outbox_line(token, notification, now_ms))?;
        file.flush()?;
        Ok(())
    }
}
