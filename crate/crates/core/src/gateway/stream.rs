use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::Serialize;
use serde_json::Value;
use tokio::sync::mpsc;

use crate::auth::DeviceRegistry;
use crate::notify::{PendingNotification, PushError, PushSink};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamEventKind {
    Message,
    Presence,
    Sos,
    Notification,
}

impl StreamEventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StreamEventKind::Message => "message",
            StreamEventKind::Presence => "presence",
            StreamEventKind::Sos => "sos",
            StreamEventKind::Notification => "notification",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StreamEvent {
    pub kind: StreamEventKind,
    pub data: Value,
}

type Senders = HashMap<String, Vec<(u64, mpsc::UnboundedSender<StreamEvent>)>>;

/// Live event streams keyed by user. Sends never block.
#[derive(Default)]
pub struct StreamHub {
    next_id: AtomicU64,
    senders: Mutex<Senders>,
}

/// Keeps a stream registered until dropped.
pub struct StreamGuard {
    hub: Arc<StreamHub>,
    user_id: String,
    id: u64,
}

impl Drop for StreamGuard {
    fn drop(&mut self) {
        let mut senders = self.hub.senders.lock();
        if let Some(list) = senders.get_mut(&self.user_id) {
            list.retain(|(id, _)| *id != self.id);
            if list.is_empty() {
                senders.remove(&self.user_id);
            }
        }
        tracing::debug!(user = %self.user_id, "stream closed");
    }
}

impl StreamHub {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn open(
        self: &Arc<Self>,
        user_id: &str,
    ) -> (StreamGuard, mpsc::UnboundedReceiver<StreamEvent>) {
        let (tx, rx) = mpsc::unbounded_channel();
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        self.senders
            .lock()
            .entry(user_id.to_string())
            .or_default()
            .push((id, tx));
        let guard = StreamGuard {
            hub: self.clone(),
            user_id: user_id.to_string(),
            id,
        };
        (guard, rx)
    }

    pub fn is_streaming(&self, user_id: &str) -> bool {
        self.senders.lock().contains_key(user_id)
    }

    /// Number of live streams the user has.
    pub fn stream_count(&self, user_id: &str) -> usize {
        self.senders.lock().get(user_id).map_or(0, Vec::len)
    }

    /// Ends every open stream.
    pub fn close_all(&self) {
        self.senders.lock().clear();
    }

    /// Queues `event` on each of the user's streams; returns how many took it.
    pub fn send(&self, user_id: &str, event: StreamEvent) -> usize {
        let senders = self.senders.lock();
        senders.get(user_id).map_or(0, |list| {
            list.iter()
                .filter(|(_, tx)| tx.send(event.clone()).is_ok())
                .count()
        })
    }
}

/// Push sink that writes to an inner sink and mirrors each notification
/// once onto the recipient's live streams.
pub struct ForwardingPushSink {
    inner: Option<Arc<dyn PushSink>>,
    hub: Arc<StreamHub>,
    devices: DeviceRegistry,
    last_forwarded: Mutex<HashMap<String, String>>,
}

impl ForwardingPushSink {
    pub fn new(
        inner: Option<Arc<dyn PushSink>>,
        hub: Arc<StreamHub>,
        devices: DeviceRegistry,
    ) -> Self {
        Self {
            inner,
            hub,
            devices,
            last_forwarded: Mutex::new(HashMap::new()),
        }
    }
}

impl PushSink for ForwardingPushSink {
    fn deliver(
        &self,
        token: &str,
        notification: &PendingNotification,
        now_ms: u64,
    ) -> Result<(), PushError> {
        if let Some(inner) = &self.inner {
            inner.deliver(token, notification, now_ms)?;
        }
        if let Some(owner) = self.devices.owner(token) {
            let mut last = self.last_forwarded.lock();
            if last.get(&owner) != Some(&notification.id) && self.hub.is_streaming(&owner) {
                self.hub.send(
                    &owner,
                    StreamEvent {
                        kind: StreamEventKind::Notification,
                        data: serde_json::to_value(notification).unwrap_or(Value::Null),
                    },
                );
                last.insert(owner, notification.id.clone());
            }
        }
        Ok(())
    }
}
