//! Write-triggered push notifications.
//!
//! Trigger handlers turn qualifying writes (a new chat message, a new
//! broadcast) into entries under `notifications/pending`. A dispatch cycle
//! sends each entry to every device token of its recipient through the
//! [`PushSink`] port and then deletes it. Entries for recipients without
//! tokens stay pending until a token shows up or the TTL runs out.

mod sink;

use std::collections::BTreeMap;
use std::sync::{Arc, Weak};
use std::thread;
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use serde::Serialize;
use thiserror::Error;

use crate::auth::DeviceRegistry;
use crate::chat::split_conversation_key;
use crate::time::secs;
use crate::treestore::{
    PathPattern, PushId, Subscription, TreeError, TreePath, TreeStore, TreeValue,
    TriggerRegistration, WriteEvent,
};

pub use sink::{outbox_line, OutboxPushSink, PushError, PushSink, PUSH_OUTBOX_FILE};

pub const PREVIEW_CHARS: usize = 120;
pub const CHAT_MESSAGE_PATTERN: &str = "chats/*/messages/*";
pub const BROADCAST_PATTERN: &str = "broadcast/*";
const EVERYONE: &str = "*";

#[derive(Debug, Error)]
pub enum NotifyError {
    #[error("broadcast title and body must be non-empty")]
    EmptyBroadcast,
    #[error(transparent)]
    Store(#[from] TreeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum NotificationKind {
    #[serde(rename = "chat-message")]
    ChatMessage,
    #[serde(rename = "admin-broadcast")]
    AdminBroadcast,
}

impl NotificationKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            NotificationKind::ChatMessage => "chat-message",
            NotificationKind::AdminBroadcast => "admin-broadcast",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "chat-message" => Some(NotificationKind::ChatMessage),
            "admin-broadcast" => Some(NotificationKind::AdminBroadcast),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PendingNotification {
    pub id: String,
    /// `None` addresses every user (broadcasts).
    pub recipient_id: Option<String>,
    pub kind: NotificationKind,
    pub payload: BTreeMap<String, String>,
    pub created_at: i64,
}

impl PendingNotification {
    fn to_tree(&self) -> TreeValue {
        TreeValue::from_pairs([
            (
                "recipient_id",
                TreeValue::from(self.recipient_id.as_deref().unwrap_or(EVERYONE)),
            ),
            ("kind", self.kind.as_str().into()),
            (
                "payload",
                TreeValue::from_pairs(self.payload.iter().map(|(k, v)| (k.clone(), v.as_str()))),
            ),
            ("created_at", self.created_at.into()),
        ])
    }

    fn from_tree(id: &str, v: &TreeValue) -> Option<Self> {
        let recipient = v.child("recipient_id").as_str()?;
        Some(Self {
            id: id.to_string(),
            recipient_id: (recipient != EVERYONE).then(|| recipient.to_string()),
            kind: NotificationKind::parse(v.child("kind").as_str()?)?,
            payload: v
                .child("payload")
                .as_map()
                .into_iter()
                .flatten()
                .filter_map(|(k, v)| Some((k.clone(), v.as_str()?.to_string())))
                .collect(),
            created_at: v.child("created_at").as_i64()?,
        })
    }

    /// The user who caused this notification, if any.
    pub fn sender_id(&self) -> Option<&str> {
        self.payload.get("sender_id").map(String::as_str)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DispatchStatus {
    Delivered,
    DeadToken,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DispatchRecord {
    pub notification_id: String,
    pub recipient_id: String,
    pub device_token: String,
    pub status: DispatchStatus,
    /// Epoch milliseconds.
    pub attempted_at: u64,
}

#[derive(Clone, Debug)]
pub struct NotifyConfig {
    pub pending_ttl_secs: i64,
    pub sweep_interval: Duration,
}

impl Default for NotifyConfig {
    fn default() -> Self {
        Self {
            pending_ttl_secs: 72 * 3600,
            sweep_interval: Duration::from_secs(1),
        }
    }
}

pub fn pending_path() -> TreePath {
    TreePath::from_segments(["notifications", "pending"]).expect("static path")
}

pub fn broadcast_path() -> TreePath {
    TreePath::from_segments(["broadcast"]).expect("static path")
}

fn preview(body: &str) -> String {
    body.chars().take(PREVIEW_CHARS).collect()
}

#[derive(Default)]
struct Wake {
    pending: Mutex<bool>,
    cv: Condvar,
}

pub struct Notifier {
    store: Arc<TreeStore>,
    devices: DeviceRegistry,
    sink: Arc<dyn PushSink>,
    config: NotifyConfig,
    chat_pattern: PathPattern,
    broadcast_pattern: PathPattern,
    cycle: Mutex<()>,
    wake: Wake,
}

impl Notifier {
    pub fn new(store: Arc<TreeStore>, sink: Arc<dyn PushSink>, config: NotifyConfig) -> Self {
        Self {
            devices: DeviceRegistry::new(store.clone()),
            store,
            sink,
            config,
            chat_pattern: PathPattern::parse(CHAT_MESSAGE_PATTERN).expect("static pattern"),
            broadcast_pattern: PathPattern::parse(BROADCAST_PATTERN).expect("static pattern"),
            cycle: Mutex::new(()),
            wake: Wake::default(),
        }
    }

    /// Subscribes the enqueue handler to chat-message and broadcast writes.
    pub fn install(self: &Arc<Self>) -> Result<Vec<Subscription>, TreeError> {
        let mut subs = Vec::new();
        for (pattern, id) in [
            (CHAT_MESSAGE_PATTERN, "notify.chat-message"),
            (BROADCAST_PATTERN, "notify.admin-broadcast"),
        ] {
            let weak: Weak<Notifier> = Arc::downgrade(self);
            subs.push(self.store.subscribe(
                TriggerRegistration::new(pattern, id)?,
                move |event| {
                    let Some(notifier) = weak.upgrade() else {
                        return;
                    };
                    match notifier.enqueue_on_write(event) {
                        Ok(Some(_)) => notifier.wake(),
                        Ok(None) => {}
                        Err(e) => tracing::error!(path = %event.path, error = %e, "enqueue failed"),
                    }
                },
            )?);
        }
        Ok(subs)
    }

    /// Turns one committed write into at most one pending notification.
    pub fn enqueue_on_write(
        &self,
        event: &WriteEvent,
    ) -> Result<Option<PendingNotification>, NotifyError> {
        if !event.old.is_absent() || event.new.as_map().is_none() {
            return Ok(None);
        }
        let created_at = event.new.child("sent_at").as_i64();
        let pending = if self.chat_pattern.matches(&event.path) {
            self.chat_notification(event)
        } else if self.broadcast_pattern.matches(&event.path) {
            let title = event.new.child("title").as_str();
            let body = event.new.child("body").as_str();
            match (title, body) {
                (Some(title), Some(body)) => Some((
                    None,
                    NotificationKind::AdminBroadcast,
                    BTreeMap::from([
                        ("title".to_string(), title.to_string()),
                        ("body".to_string(), preview(body)),
                    ]),
                )),
                _ => None,
            }
        } else {
            None
        };
        let Some((recipient_id, kind, payload)) = pending else {
            return Ok(None);
        };

        let created_at = created_at
            .or_else(|| event.new.child("created_at").as_i64())
            .unwrap_or_default();
        let mut notification = PendingNotification {
            id: String::new(),
            recipient_id,
            kind,
            payload,
            created_at,
        };
        let (id, _) = self.store.push(
            &pending_path(),
            notification.to_tree(),
            created_at.max(0) as u64 * 1000,
        )?;
        notification.id = id.into_string();
        Ok(Some(notification))
    }

    #[allow(clippy::type_complexity)]
    fn chat_notification(
        &self,
        event: &WriteEvent,
    ) -> Option<(Option<String>, NotificationKind, BTreeMap<String, String>)> {
        let segments = event.path.segments();
        let conversation = &segments[1];
        let message_id = &segments[3];
        let sender = event.new.child("sender_id").as_str()?;
        let (a, b) = split_conversation_key(conversation)?;
        let recipient = if sender == a {
            b
        } else if sender == b {
            a
        } else {
            tracing::warn!(%conversation, %sender, "message sender is not a participant");
            return None;
        };
        let payload = BTreeMap::from([
            ("sender_id".to_string(), sender.to_string()),
            (
                "sender_name".to_string(),
                event.new.child("sender_name").as_str().unwrap_or_default().to_string(),
            ),
            (
                "preview".to_string(),
                preview(event.new.child("body").as_str().unwrap_or_default()),
            ),
            ("message_id".to_string(), message_id.clone()),
        ]);
        Some((
            Some(recipient.to_string()),
            NotificationKind::ChatMessage,
            payload,
        ))
    }

    /// Writes a broadcast; the trigger turns it into a pending notification.
    pub fn broadcast(&self, title: &str, body: &str, now_ms: u64) -> Result<PushId, NotifyError> {
        if title.trim().is_empty() || body.trim().is_empty() {
            return Err(NotifyError::EmptyBroadcast);
        }
        let (id, _) = self.store.push(
            &broadcast_path(),
            TreeValue::from_pairs([
                ("title", TreeValue::from(title)),
                ("body", body.into()),
                ("created_at", secs(now_ms).into()),
            ]),
            now_ms,
        )?;
        Ok(id)
    }

    /// Pending notifications, oldest first.
    pub fn pending(&self) -> Vec<PendingNotification> {
        self.store
            .get(&pending_path())
            .as_map()
            .into_iter()
            .flatten()
            .filter_map(|(id, v)| PendingNotification::from_tree(id, v))
            .collect()
    }

    /// One delivery pass over the pending set.
    pub fn dispatch_pending(&self, now_ms: u64) -> Vec<DispatchRecord> {
        let _cycle = self.cycle.lock();
        let now = secs(now_ms);
        let devices = self.devices.all();
        let mut records = Vec::new();

        for notification in self.pending() {
            let path = match pending_path().child(notification.id.as_str()) {
                Ok(p) => p,
                Err(_) => continue,
            };
            if now - notification.created_at > self.config.pending_ttl_secs {
                tracing::info!(id = %notification.id, "pending notification expired");
                self.remove(&path);
                continue;
            }
            let targets: Vec<_> = devices
                .iter()
                .filter(|d| match &notification.recipient_id {
                    Some(r) => &d.user_id == r,
                    None => true,
                })
                .filter(|d| notification.sender_id() != Some(d.user_id.as_str()))
                .collect();
            if targets.is_empty() {
                continue;
            }
            for device in targets {
                let status = match self.sink.deliver(&device.token, &notification, now_ms) {
                    Ok(()) => DispatchStatus::Delivered,
                    Err(e) => {
                        tracing::warn!(token = %device.token, error = %e, "push failed, dropping token");
                        if let Err(e) = self.devices.unregister(&device.user_id, &device.token) {
                            tracing::error!(error = %e, "could not unregister dead token");
                        }
                        DispatchStatus::DeadToken
                    }
                };
                records.push(DispatchRecord {
                    notification_id: notification.id.clone(),
                    recipient_id: device.user_id.clone(),
                    device_token: device.token.clone(),
                    status,
                    attempted_at: now_ms,
                });
            }
            self.remove(&path);
        }
        records
    }

    fn remove(&self, path: &TreePath) {
        if let Err(e) = self.store.set(path, TreeValue::Absent) {
            tracing::error!(error = %e, "could not remove pending notification");
        }
    }

    /// Asks the worker to run a cycle now instead of at the next sweep.
    pub fn wake(&self) {
        *self.wake.pending.lock() = true;
        self.wake.cv.notify_all();
    }

    /// Starts the background dispatcher. `on_records` sees every non-empty
    /// batch of records.
    pub fn spawn_worker<F>(self: &Arc<Self>, on_records: F) -> DispatchWorker
    where
        F: Fn(Vec<DispatchRecord>) + Send + 'static,
    {
        let stop = Arc::new(Mutex::new(false));
        let notifier = Arc::downgrade(self);
        let interval = self.config.sweep_interval;
        let stop_flag = stop.clone();
        let handle = thread::Builder::new()
            .name("notify-dispatch".into())
            .spawn(move || loop {
                let Some(n) = notifier.upgrade() else { break };
                {
                    let mut woke = n.wake.pending.lock();
                    if !*woke {
                        n.wake.cv.wait_for(&mut woke, interval);
                    }
                    *woke = false;
                }
                if *stop_flag.lock() {
                    break;
                }
                let records = n.dispatch_pending(crate::time::now_ms());
                if !records.is_empty() {
                    on_records(records);
                }
            })
            .expect("spawn dispatch worker");
        DispatchWorker {
            stop,
            notifier: Arc::downgrade(self),
            handle: Some(handle),
        }
    }
}

/// Background dispatcher; stops and joins on [`DispatchWorker::stop`] or drop.
pub struct DispatchWorker {
    stop: Arc<Mutex<bool>>,
    notifier: Weak<Notifier>,
    handle: Option<thread::JoinHandle<()>>,
}

impl DispatchWorker {
    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        *self.stop.lock() = true;
        if let Some(n) = self.notifier.upgrade() {
            n.wake();
        }
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for DispatchWorker {
    fn drop(&mut self) {
        self.shutdown();
    }
}
