use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use rand::Rng;

pub const VERIFY_SUBJECT: &str = "Verify your SecureIT account";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutgoingMail {
    pub to: String,
    pub subject: String,
    pub body: String,
}

impl OutgoingMail {
    pub fn verification(to: &str, first_name: &str, token: &str) -> Self {
        Self {
            to: to.to_string(),
            subject: VERIFY_SUBJECT.to_string(),
            body: format!(
                "Hello {first_name},\n\n\
                 Confirm your email address to finish creating your account.\n\
                 Submit the token below to /auth/verify.\n\n\
                 {token}\n"
            ),
        }
    }

    /// RFC 822 style rendering: headers, blank line, body.
    pub fn render(&self, date: &str) -> String {
        format!(
            "To: {}\nSubject: {}\nDate: {}\nContent-Type: text/plain; charset=utf-8\n\n{}",
            self.to, self.subject, date, self.body
        )
    }
}

/// Outbound mail port.
pub trait Mailer: Send + Sync {
    fn send(&self, mail: &OutgoingMail, now_ms: u64) -> io::Result<()>;
}

/// Writes each mail to `<dir>/<epoch-ms>-<rand>.eml`.
pub struct OutboxMailer {
    dir: PathBuf,
}

impl OutboxMailer {
    pub fn new(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl Mailer for OutboxMailer {
    fn send(&self, mail: &OutgoingMail, now_ms: u64) -> io::Result<()> {
        let suffix: u32 = rand::thread_rng().gen();
        let name = format!("{now_ms}-{suffix:08x}.eml");
        let date = crate::time::iso8601(now_ms);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, mail.render(&date))?;
        fs::rename(tmp, self.dir.join(name))
    }
}

/// Keeps mail in memory; handy for tests and examples.
#[derive(Default)]
pub struct MemoryMailer {
    sent: Mutex<Vec<OutgoingMail>>,
}

impl MemoryMailer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn sent(&self) -> Vec<OutgoingMail> {
        self.sent.lock().clone()
    }

    pub fn last_token(&self) -> Option<String> {
        self.sent.lock().last().and_then(|m| token_line(&m.body))
    }
}

impl Mailer for MemoryMailer {
    fn send(&self, mail: &OutgoingMail, _now_ms: u64) -> io::Result<()> {
        self.sent.lock().push(mail.clone());
        Ok(())
    }
}

/// The bare token line of a verification mail (its last non-empty line).
pub fn token_line(text: &str) -> Option<String> {
    text.lines()
        .rev()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .map(str::to_string)
}

/// Reads the verification token out of a rendered `.eml` file.
pub fn read_token_from_eml(path: &Path) -> io::Result<Option<String>> {
    Ok(token_line(&fs::read_to_string(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outbox_file_layout() {
        let dir = tempfile::tempdir().unwrap();
        let mailer = OutboxMailer::new(dir.path()).unwrap();
        let mail = OutgoingMail::verification("a@x.y", "A", "deadbeef");
        mailer.send(&mail, 1_700_000_000_123).unwrap();
        let files: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        assert_eq!(files.len(), 1);
        let name = files[0].file_name().unwrap().to_str().unwrap().to_string();
        assert!(name.starts_with("1700000000123-") && name.ends_with(".eml"));
        let text = fs::read_to_string(&files[0]).unwrap();
        assert!(text.starts_with("To: a@x.y\nSubject: Verify your SecureIT account\n"));
        assert!(text.lines().any(|l| l == "deadbeef"));
        assert_eq!(read_token_from_eml(&files[0]).unwrap().as_deref(), Some("deadbeef"));
    }
}
