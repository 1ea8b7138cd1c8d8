use std::sync::Arc;

use serde::Serialize;

use super::AuthError;
use crate::time::secs;
use crate::treestore::{escape_key, unescape_key, TreePath, TreeStore, TreeValue};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DeviceToken {
    pub user_id: String,
    pub token: String,
    pub registered_at: i64,
}

/// Notification targets, keyed by token so each token has one owner.
#[derive(Clone)]
pub struct DeviceRegistry {
    store: Arc<TreeStore>,
}

fn devices_path() -> TreePath {
    TreePath::from_segments(["devices"]).expect("static path")
}

impl DeviceRegistry {
    pub fn new(store: Arc<TreeStore>) -> Self {
        Self { store }
    }

    /// Records `token` for `user_id`, taking it away from any previous owner.
    pub fn register(&self, user_id: &str, token: &str, now_ms: u64) -> Result<(), AuthError> {
        if token.trim().is_empty() || token.len() > 4096 {
            return Err(AuthError::InvalidDeviceToken);
        }
        self.store.set(
            &devices_path().child(escape_key(token))?,
            TreeValue::from_pairs([
                ("user_id", TreeValue::from(user_id)),
                ("token", token.into()),
                ("registered_at", secs(now_ms).into()),
            ]),
        )?;
        Ok(())
    }

    /// Removes `token` if `user_id` still owns it. Returns whether it did.
    pub fn unregister(&self, user_id: &str, token: &str) -> Result<bool, AuthError> {
        let path = devices_path().child(escape_key(token))?;
        let removed = self.store.transaction::<AuthError, _>(&path, |current| {
            if current.child("user_id").as_str() == Some(user_id) {
                Ok(Some(TreeValue::Absent))
            } else {
                Ok(None)
            }
        })?;
        Ok(removed.is_some())
    }

    pub fn owner(&self, token: &str) -> Option<String> {
        let path = devices_path().child(escape_key(token)).ok()?;
        self.store
            .get(&path)
            .child("user_id")
            .as_str()
            .map(str::to_string)
    }

    /// All registered tokens, in key order.
    pub fn all(&self) -> Vec<DeviceToken> {
        self.store
            .get(&devices_path())
            .into_map()
            .unwrap_or_default()
            .into_iter()
            .filter_map(|(key, v)| {
                Some(DeviceToken {
                    user_id: v.child("user_id").as_str()?.to_string(),
                    token: v
                        .child("token")
                        .as_str()
                        .map(str::to_string)
                        .or_else(|| unescape_key(&key))?,
                    registered_at: v.child("registered_at").as_i64().unwrap_or(0),
                })
            })
            .collect()
    }

    pub fn tokens_for(&self, user_id: &str) -> Vec<String> {
        self.all()
            .into_iter()
            .filter(|d| d.user_id == user_id)
            .map(|d| d.token)
            .collect()
    }
}
