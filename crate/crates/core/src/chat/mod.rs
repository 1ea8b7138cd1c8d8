//! One-to-one chat, user search and checkpoint presence.
//!
//! ```text
//! chats/<lo-id><hi-id>/messages/<push-id>  {sender_id, sender_name, body, sent_at}
//! chats/<user>/partners/<peer>             true
//! presence/<user>/<checkpoint>             epoch seconds of the last visit
//! ```
//!
//! A conversation is stored once under the concatenation of the two user
//! ids in ascending order; each side's `partners` node lists the other.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::auth::UserRecord;
use crate::time::secs;
use crate::treestore::{TreeError, TreePath, TreeStore, TreeValue};

pub const MAX_BODY_CHARS: usize = 4096;
pub const DEFAULT_CHECKPOINTS: [&str; 3] = ["login", "chat-open", "profile-open"];

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("search query is empty")]
    EmptyQuery,
    #[error("message body is empty")]
    EmptyBody,
    #[error("message body exceeds {MAX_BODY_CHARS} characters")]
    BodyTooLong,
    #[error("cannot send a message to yourself")]
    SelfMessage,
    #[error("recipient does not exist")]
    UnknownRecipient,
    #[error("user does not exist")]
    UnknownUser,
    #[error("not a participant of this conversation")]
    NotParticipant,
    #[error("unknown checkpoint {0:?}")]
    UnknownCheckpoint(String),
    #[error(transparent)]
    Store(#[from] TreeError),
}

#[derive(Clone, Debug)]
pub struct ChatConfig {
    pub activity_threshold_secs: i64,
    pub checkpoints: Vec<String>,
}

impl Default for ChatConfig {
    fn default() -> Self {
        Self {
            activity_threshold_secs: 300,
            checkpoints: DEFAULT_CHECKPOINTS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Message {
    pub id: String,
    pub sender_id: String,
    pub sender_name: String,
    pub body: String,
    pub sent_at: i64,
}

impl Message {
    fn to_tree(&self) -> TreeValue {
        TreeValue::from_pairs([
            ("sender_id", TreeValue::from(self.sender_id.as_str())),
            ("sender_name", self.sender_name.as_str().into()),
            ("body", self.body.as_str().into()),
            ("sent_at", self.sent_at.into()),
        ])
    }

    pub fn from_tree(id: &str, v: &TreeValue) -> Option<Self> {
        Some(Self {
            id: id.to_string(),
            sender_id: v.child("sender_id").as_str()?.to_string(),
            sender_name: v.child("sender_name").as_str()?.to_string(),
            body: v.child("body").as_str()?.to_string(),
            sent_at: v.child("sent_at").as_i64()?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PresenceState {
    Active,
    Away,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Presence {
    pub state: PresenceState,
    /// `now - last_seen`; `None` when the user has never hit a checkpoint.
    pub seconds_since: Option<i64>,
}

impl Presence {
    /// Pure threshold rule over the most recent checkpoint.
    pub fn derive(last_seen: Option<i64>, now: i64, threshold_secs: i64) -> Self {
        match last_seen {
            None => Presence {
                state: PresenceState::Away,
                seconds_since: None,
            },
            Some(seen) => {
                let delta = now - seen;
                Presence {
                    state: if delta <= threshold_secs {
                        PresenceState::Active
                    } else {
                        PresenceState::Away
                    },
                    seconds_since: Some(delta),
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct UserHit {
    pub user_id: String,
    pub display_name: String,
    pub presence: Presence,
}

/// Ascending-id concatenation of the two participants.
pub fn conversation_key(a: &str, b: &str) -> String {
    if a <= b {
        format!("{a}{b}")
    } else {
        format!("{b}{a}")
    }
}

/// Inverse of [`conversation_key`] for equal-length ids.
pub fn split_conversation_key(key: &str) -> Option<(&str, &str)> {
    if !key.len().is_multiple_of(2) || !key.is_char_boundary(key.len() / 2) {
        return None;
    }
    let (a, b) = key.split_at(key.len() / 2);
    (a < b).then_some((a, b))
}

pub fn messages_path(a: &str, b: &str) -> Result<TreePath, TreeError> {
    TreePath::from_segments(["chats".to_string(), conversation_key(a, b), "messages".into()])
}

fn partners_path(user: &str) -> Result<TreePath, TreeError> {
    TreePath::from_segments(["chats", user, "partners"])
}

fn presence_path(user: &str) -> Result<TreePath, TreeError> {
    TreePath::from_segments(["presence", user])
}

pub struct Chat {
    store: Arc<TreeStore>,
    config: ChatConfig,
}

impl Chat {
    pub fn new(store: Arc<TreeStore>, config: ChatConfig) -> Self {
        Self { store, config }
    }

    pub fn config(&self) -> &ChatConfig {
        &self.config
    }

    /// Users whose first or last name contains `query`, ignoring case,
    /// ordered by lower-cased display name then id.
    pub fn search_users(
        &self,
        query: &str,
        limit: usize,
        now_ms: u64,
    ) -> Result<Vec<UserHit>, ChatError> {
        let needle = query.trim().to_lowercase();
        if needle.is_empty() {
            return Err(ChatError::EmptyQuery);
        }
        let mut hits: Vec<(String, UserRecord)> = UserRecord::all(&self.store)
            .into_iter()
            .filter(|u| {
                u.first_name.to_lowercase().contains(&needle)
                    || u.last_name.to_lowercase().contains(&needle)
            })
            .map(|u| (u.display_name().to_lowercase(), u))
            .collect();
        hits.sort_by(|(ka, a), (kb, b)| ka.cmp(kb).then_with(|| a.id.cmp(&b.id)));
        let now = secs(now_ms);
        Ok(hits
            .into_iter()
            .take(limit)
            .map(|(_, u)| UserHit {
                presence: Presence::derive(
                    self.last_seen(&u.id),
                    now,
                    self.config.activity_threshold_secs,
                ),
                display_name: u.display_name(),
                user_id: u.id,
            })
            .collect())
    }

    pub fn send_message(
        &self,
        sender_id: &str,
        recipient_id: &str,
        body: &str,
        now_ms: u64,
    ) -> Result<Message, ChatError> {
        if body.trim().is_empty() {
            return Err(ChatError::EmptyBody);
        }
        if body.chars().count() > MAX_BODY_CHARS {
            return Err(ChatError::BodyTooLong);
        }
        if sender_id == recipient_id {
            return Err(ChatError::SelfMessage);
        }
        let sender = UserRecord::load(&self.store, sender_id).ok_or(ChatError::UnknownUser)?;
        if UserRecord::load(&self.store, recipient_id).is_none() {
            return Err(ChatError::UnknownRecipient);
        }

        for (me, peer) in [(sender_id, recipient_id), (recipient_id, sender_id)] {
            let path = partners_path(me)?.child(peer)?;
            self.store.transaction::<ChatError, _>(&path, |cur| {
                Ok(cur.is_absent().then_some(TreeValue::Bool(true)))
            })?;
        }

        let mut message = Message {
            id: String::new(),
            sender_id: sender_id.to_string(),
            sender_name: sender.display_name(),
            body: body.to_string(),
            sent_at: secs(now_ms),
        };
        let (id, _) = self.store.push(
            &messages_path(sender_id, recipient_id)?,
            message.to_tree(),
            now_ms,
        )?;
        message.id = id.into_string();
        Ok(message)
    }

    /// Messages after `after` (exclusive) in send order, at most `limit`.
    pub fn get_conversation(
        &self,
        user_id: &str,
        peer_id: &str,
        after: Option<&str>,
        limit: usize,
    ) -> Result<Vec<Message>, ChatError> {
        if user_id == peer_id {
            return Err(ChatError::NotParticipant);
        }
        if UserRecord::load(&self.store, peer_id).is_none() {
            return Err(ChatError::UnknownUser);
        }
        Ok(self
            .store
            .children_after(&messages_path(user_id, peer_id)?, after, limit)
            .iter()
            .filter_map(|(id, v)| Message::from_tree(id, v))
            .collect())
    }

    /// People the user has exchanged messages with.
    pub fn partners(&self, user_id: &str) -> Vec<String> {
        partners_path(user_id)
            .map(|p| self.store.child_keys(&p))
            .unwrap_or_default()
    }

    /// Records a visit to `name`; stored times never move backwards.
    pub fn checkpoint(&self, user_id: &str, name: &str, now_ms: u64) -> Result<i64, ChatError> {
        if !self.config.checkpoints.iter().any(|c| c == name) {
            return Err(ChatError::UnknownCheckpoint(name.to_string()));
        }
        if UserRecord::load(&self.store, user_id).is_none() {
            return Err(ChatError::UnknownUser);
        }
        let now = secs(now_ms);
        let mut stored = now;
        self.store
            .transaction::<ChatError, _>(&presence_path(user_id)?.child(name)?, |cur| {
                match cur.as_i64() {
                    Some(prev) if prev >= now => {
                        stored = prev;
                        Ok(None)
                    }
                    _ => Ok(Some(TreeValue::Int(now))),
                }
            })?;
        Ok(stored)
    }

    /// Per-checkpoint timestamps of the user.
    pub fn checkpoints(&self, user_id: &str) -> Vec<(String, i64)> {
        presence_path(user_id)
            .map(|p| self.store.get(&p))
            .unwrap_or_default()
            .into_map()
            .unwrap_or_default()
            .into_iter()
            .filter_map(|(k, v)| Some((k, v.as_i64()?)))
            .collect()
    }

    fn last_seen(&self, user_id: &str) -> Option<i64> {
        self.checkpoints(user_id).into_iter().map(|(_, t)| t).max()
    }

    pub fn presence(&self, user_id: &str, now_ms: u64) -> Result<Presence, ChatError> {
        if UserRecord::load(&self.store, user_id).is_none() {
            return Err(ChatError::UnknownUser);
        }
        Ok(Presence::derive(
            self.last_seen(user_id),
            secs(now_ms),
            self.config.activity_threshold_secs,
        ))
    }
}
