//! Registration, email verification, sessions and device tokens.
//!
//! Tree layout:
//!
//! ```text
//! users/<id>                  {id, first_name, last_name, email, verified, created_at}
//! auth/credentials/<id>       {digest}
//! auth/emails/<escaped-email> <id>
//! auth/verifications/<token>  {user_id, expires_at, used}
//! auth/sessions/<token>       {user_id, issued_at, expires_at}
//! auth/admins/<id>            true
//! devices/<escaped-token>     {user_id, token, registered_at}
//! ```

mod devices;
mod mail;
pub mod password;

use std::sync::Arc;

use rand::RngCore;
use serde::Serialize;
use thiserror::Error;

use crate::time::secs;
use crate::treestore::{escape_key, validate_segment, TreeError, TreePath, TreeStore, TreeValue};

pub use devices::{DeviceRegistry, DeviceToken};
pub use mail::{
    read_token_from_eml, token_line, Mailer, MemoryMailer, OutboxMailer, OutgoingMail,
    VERIFY_SUBJECT,
};

pub const MIN_PASSWORD_CHARS: usize = 8;

#[derive(Debug, Error)]
pub enum AuthError {
    #[error("an account with this email already exists")]
    EmailTaken,
    #[error("password must be at least {MIN_PASSWORD_CHARS} characters")]
    WeakPassword,
    #[error("email address is not valid")]
    InvalidEmail,
    #[error("first and last name must be non-empty text")]
    InvalidName,
    #[error("unknown verification token")]
    UnknownToken,
    #[error("verification token has expired")]
    ExpiredToken,
    #[error("verification token was already used")]
    AlreadyUsed,
    #[error("wrong email or password")]
    BadCredentials,
    #[error("email address has not been verified")]
    EmailUnverified,
    #[error("missing, unknown or expired session")]
    Unauthenticated,
    #[error("unknown user")]
    UnknownUser,
    #[error("device token must be non-empty")]
    InvalidDeviceToken,
    #[error("mail delivery failed: {0}")]
    Mail(String),
    #[error(transparent)]
    Store(#[from] TreeError),
}

#[derive(Clone, Debug)]
pub struct AuthConfig {
    pub verification_ttl_secs: i64,
    pub session_ttl_secs: i64,
    pub password_iterations: u32,
}

impl Default for AuthConfig {
    fn default() -> Self {
        Self {
            verification_ttl_secs: 24 * 3600,
            session_ttl_secs: 7 * 24 * 3600,
            password_iterations: password::DEFAULT_ITERATIONS,
        }
    }
}

/// Public profile stored under `users/<id>`. The password digest lives in a
/// separate credentials node and never leaves this module.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct UserRecord {
    pub id: String,
    pub first_name: String,
    pub last_name: String,
    pub email: String,
    pub verified: bool,
    pub created_at: i64,
}

impl UserRecord {
    pub fn display_name(&self) -> String {
        format!("{} {}", self.first_name, self.last_name)
    }

    fn to_tree(&self) -> TreeValue {
        TreeValue::from_pairs([
            ("id", TreeValue::from(self.id.as_str())),
            ("first_name", self.first_name.as_str().into()),
            ("last_name", self.last_name.as_str().into()),
            ("email", self.email.as_str().into()),
            ("verified", self.verified.into()),
            ("created_at", self.created_at.into()),
        ])
    }

    pub fn from_tree(id: &str, value: &TreeValue) -> Option<Self> {
        Some(Self {
            id: id.to_string(),
            first_name: value.child("first_name").as_str()?.to_string(),
            last_name: value.child("last_name").as_str()?.to_string(),
            email: value.child("email").as_str()?.to_string(),
            verified: value.child("verified").as_bool().unwrap_or(false),
            created_at: value.child("created_at").as_i64().unwrap_or(0),
        })
    }

    /// Reads `users/<id>`.
    pub fn load(store: &TreeStore, id: &str) -> Option<Self> {
        let path = users_path().child(id).ok()?;
        Self::from_tree(id, &store.get(&path))
    }

    /// Every stored user, in id order.
    pub fn all(store: &TreeStore) -> Vec<Self> {
        store
            .get(&users_path())
            .into_map()
            .unwrap_or_default()
            .iter()
            .filter_map(|(id, v)| Self::from_tree(id, v))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct VerificationToken {
    pub token: String,
    pub user_id: String,
    pub expires_at: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Session {
    pub token: String,
    pub user_id: String,
    pub issued_at: i64,
    pub expires_at: i64,
}

/// Third-party sign-in (social accounts). No implementation ships; the
/// trait marks where one would plug in.
pub trait IdentityProvider: Send + Sync {
    /// Returns `(first, last, email)` for a provider-issued credential.
    fn resolve(&self, credential: &str) -> Result<(String, String, String), AuthError>;
}

pub fn users_path() -> TreePath {
    TreePath::from_segments(["users"]).expect("static path")
}

fn auth_path(parts: &[&str]) -> Result<TreePath, TreeError> {
    TreePath::from_segments(std::iter::once("auth").chain(parts.iter().copied()))
}

/// 128 random bits, hex encoded.
pub fn random_token() -> String {
    let mut bytes = [0u8; 16];
    rand::rngs::OsRng.fill_bytes(&mut bytes);
    hex::encode(bytes)
}

pub fn normalize_email(raw: &str) -> Result<String, AuthError> {
    let email = raw.trim().to_lowercase();
    let (local, domain) = email.split_once('@').ok_or(AuthError::InvalidEmail)?;
    let ok = !local.is_empty()
        && email.len() <= 254
        && !domain.contains('@')
        && domain.contains('.')
        && !domain.starts_with('.')
        && !domain.ends_with('.')
        && !domain.contains("..")
        && !email.chars().any(|c| c.is_whitespace() || c.is_control());
    if ok {
        Ok(email)
    } else {
        Err(AuthError::InvalidEmail)
    }
}

fn clean_name(raw: &str) -> Result<String, AuthError> {
    let name = raw.trim();
    if name.is_empty() || name.chars().any(char::is_control) {
        return Err(AuthError::InvalidName);
    }
    Ok(name.to_string())
}

pub struct Auth {
    store: Arc<TreeStore>,
    mailer: Arc<dyn Mailer>,
    devices: DeviceRegistry,
    config: AuthConfig,
}

impl Auth {
    pub fn new(store: Arc<TreeStore>, mailer: Arc<dyn Mailer>, config: AuthConfig) -> Self {
        Self {
            devices: DeviceRegistry::new(store.clone()),
            store,
            mailer,
            config,
        }
    }

    pub fn config(&self) -> &AuthConfig {
        &self.config
    }

    pub fn devices(&self) -> &DeviceRegistry {
        &self.devices
    }

    /// Creates an unverified account and mails its verification token.
    pub fn register(
        &self,
        first: &str,
        last: &str,
        email: &str,
        password: &str,
        now_ms: u64,
    ) -> Result<(String, VerificationToken), AuthError> {
        let first = clean_name(first)?;
        let last = clean_name(last)?;
        let email = normalize_email(email)?;
        if password.chars().count() < MIN_PASSWORD_CHARS {
            return Err(AuthError::WeakPassword);
        }

        let id = self.store.next_push_id(now_ms).into_string();
        self.claim_email(&email, &id)?;

        let digest = password::hash_password(password, self.config.password_iterations);
        let now = secs(now_ms);
        let record = UserRecord {
            id: id.clone(),
            first_name: first,
            last_name: last,
            email,
            verified: false,
            created_at: now,
        };
        self.store
            .set(&auth_path(&["credentials", &id])?, TreeValue::from_pairs([("digest", digest)]))?;
        self.store.set(&users_path().child(&id)?, record.to_tree())?;

        let token = VerificationToken {
            token: random_token(),
            user_id: id.clone(),
            expires_at: now + self.config.verification_ttl_secs,
        };
        self.store.set(
            &auth_path(&["verifications", &token.token])?,
            TreeValue::from_pairs([
                ("user_id", TreeValue::from(id.as_str())),
                ("expires_at", token.expires_at.into()),
                ("used", false.into()),
            ]),
        )?;
        self.mailer
            .send(
                &OutgoingMail::verification(&record.email, &record.first_name, &token.token),
                now_ms,
            )
            .map_err(|e| AuthError::Mail(e.to_string()))?;
        Ok((id, token))
    }

    fn claim_email(&self, email: &str, id: &str) -> Result<(), AuthError> {
        let path = auth_path(&["emails", &escape_key(email)])?;
        self.store.transaction(&path, |current| {
            if current.is_absent() {
                Ok(Some(TreeValue::from(id)))
            } else {
                Err(AuthError::EmailTaken)
            }
        })?;
        Ok(())
    }

    fn user_id_for_email(&self, email: &str) -> Option<String> {
        let path = auth_path(&["emails", &escape_key(email)]).ok()?;
        self.store.get(&path).as_str().map(str::to_string)
    }

    /// Consumes a verification token and marks its user verified.
    pub fn verify_email(&self, token: &str, now_ms: u64) -> Result<String, AuthError> {
        if validate_segment(token).is_err() {
            return Err(AuthError::UnknownToken);
        }
        let path = auth_path(&["verifications", token])?;
        let now = secs(now_ms);
        let mut user_id = String::new();
        self.store.transaction(&path, |current| {
            let Some(entry) = current.as_map() else {
                return Err(AuthError::UnknownToken);
            };
            if current.child("used").as_bool().unwrap_or(false) {
                return Err(AuthError::AlreadyUsed);
            }
            if now > current.child("expires_at").as_i64().unwrap_or(i64::MIN) {
                return Err(AuthError::ExpiredToken);
            }
            user_id = current
                .child("user_id")
                .as_str()
                .ok_or(AuthError::UnknownToken)?
                .to_string();
            let mut entry = entry.clone();
            entry.insert("used".into(), true.into());
            Ok(Some(TreeValue::Map(entry)))
        })?;
        self.store
            .set(&users_path().child(&user_id)?.child("verified")?, true.into())?;
        Ok(user_id)
    }

    /// Issues a session for verified users with the right password.
    pub fn login(&self, email: &str, password: &str, now_ms: u64) -> Result<Session, AuthError> {
        let digest = normalize_email(email)
            .ok()
            .and_then(|e| self.user_id_for_email(&e))
            .and_then(|id| {
                let d = self.store.get(&auth_path(&["credentials", &id]).ok()?);
                Some((id, d.child("digest").as_str()?.to_string()))
            });
        let Some((user_id, digest)) = digest else {
            // Same work as a real check so unknown emails are not faster.
            let _ = password::verify_password(password, &dummy_digest(self.config.password_iterations));
            return Err(AuthError::BadCredentials);
        };
        if !password::verify_password(password, &digest) {
            return Err(AuthError::BadCredentials);
        }
        let user = UserRecord::load(&self.store, &user_id).ok_or(AuthError::BadCredentials)?;
        if !user.verified {
            return Err(AuthError::EmailUnverified);
        }

        let now = secs(now_ms);
        let session = Session {
            token: random_token(),
            user_id,
            issued_at: now,
            expires_at: now + self.config.session_ttl_secs,
        };
        self.store.set(
            &auth_path(&["sessions", &session.token])?,
            TreeValue::from_pairs([
                ("user_id", TreeValue::from(session.user_id.as_str())),
                ("issued_at", session.issued_at.into()),
                ("expires_at", session.expires_at.into()),
            ]),
        )?;
        Ok(session)
    }

    /// Resolves a session token to its user id.
    pub fn authenticate(&self, token: &str, now_ms: u64) -> Result<String, AuthError> {
        if validate_segment(token).is_err() {
            return Err(AuthError::Unauthenticated);
        }
        let entry = self.store.get(&auth_path(&["sessions", token])?);
        let expires_at = entry
            .child("expires_at")
            .as_i64()
            .ok_or(AuthError::Unauthenticated)?;
        if secs(now_ms) > expires_at {
            return Err(AuthError::Unauthenticated);
        }
        entry
            .child("user_id")
            .as_str()
            .map(str::to_string)
            .ok_or(AuthError::Unauthenticated)
    }

    pub fn logout(&self, token: &str) -> Result<(), AuthError> {
        if validate_segment(token).is_ok() {
            self.store
                .set(&auth_path(&["sessions", token])?, TreeValue::Absent)?;
        }
        Ok(())
    }

    /// Drops sessions that expired before `now_ms`. Returns how many.
    pub fn purge_expired_sessions(&self, now_ms: u64) -> Result<usize, AuthError> {
        let now = secs(now_ms);
        let sessions = self.store.get(&auth_path(&["sessions"])?);
        let mut purged = 0;
        for (token, entry) in sessions.as_map().into_iter().flatten() {
            if entry.child("expires_at").as_i64().is_none_or(|e| now > e) {
                self.store
                    .set(&auth_path(&["sessions", token])?, TreeValue::Absent)?;
                purged += 1;
            }
        }
        Ok(purged)
    }

    pub fn register_device_token(
        &self,
        user_id: &str,
        token: &str,
        now_ms: u64,
    ) -> Result<(), AuthError> {
        if UserRecord::load(&self.store, user_id).is_none() {
            return Err(AuthError::UnknownUser);
        }
        self.devices.register(user_id, token, now_ms)
    }

    pub fn user(&self, user_id: &str) -> Option<UserRecord> {
        UserRecord::load(&self.store, user_id)
    }

    pub fn user_by_email(&self, email: &str) -> Option<UserRecord> {
        let email = normalize_email(email).ok()?;
        self.user(&self.user_id_for_email(&email)?)
    }

    pub fn user_count(&self) -> usize {
        self.store.child_keys(&users_path()).len()
    }

    pub fn is_admin(&self, user_id: &str) -> bool {
        auth_path(&["admins", user_id])
            .map(|p| self.store.get(&p).as_bool() == Some(true))
            .unwrap_or(false)
    }

    pub fn grant_admin(&self, user_id: &str) -> Result<(), AuthError> {
        if self.user(user_id).is_none() {
            return Err(AuthError::UnknownUser);
        }
        self.store.set(&auth_path(&["admins", user_id])?, true.into())?;
        Ok(())
    }

    /// Promotes the account with `email`, creating a verified one first when
    /// none exists. Returns the user id and, for new accounts, the generated
    /// password.
    pub fn create_admin(
        &self,
        email: &str,
        now_ms: u64,
    ) -> Result<(String, Option<String>), AuthError> {
        if let Some(user) = self.user_by_email(email) {
            self.grant_admin(&user.id)?;
            return Ok((user.id, None));
        }
        let password = random_token();
        let (id, token) = self.register("Site", "Admin", email, &password, now_ms)?;
        self.verify_email(&token.token, now_ms)?;
        self.grant_admin(&id)?;
        Ok((id, Some(password)))
    }
}

fn dummy_digest(iterations: u32) -> String {
    use std::sync::OnceLock;
    static DUMMY: OnceLock<String> = OnceLock::new();
    DUMMY
        .get_or_init(|| password::hash_password("not-a-real-password", iterations))
        .clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (Arc<TreeStore>, Arc<MemoryMailer>, Auth) {
        let store = Arc::new(TreeStore::new());
        let mailer = Arc::new(MemoryMailer::new());
        let auth = Auth::new(
            store.clone(),
            mailer.clone(),
            AuthConfig {
                password_iterations: password::MIN_ITERATIONS,
                ..Default::default()
            },
        );
        (store, mailer, auth)
    }

    const T0: u64 = 1_700_000_000_000;

    #[test]
    fn register_writes_profile_and_mails_token() {
        let (store, mailer, auth) = setup();
        let (id, token) = auth.register("A", "B", "a@x.y", "hunter22", T0).unwrap();
        let user = UserRecord::load(&store, &id).unwrap();
        assert_eq!(user.email, "a@x.y");
        assert!(!user.verified);
        let sent = mailer.sent();
        assert_eq!(sent.len(), 1);
        assert_eq!(sent[0].subject, VERIFY_SUBJECT);
        assert_eq!(mailer.last_token().unwrap(), token.token);
        assert_eq!(token.expires_at, 1_700_000_000 + 24 * 3600);
        // the plaintext is nowhere in the tree
        assert!(!store.snapshot().contains("hunter22"));
    }

    #[test]
    fn register_errors() {
        let (_, _, auth) = setup();
        auth.register("A", "B", "a@x.y", "hunter22", T0).unwrap();
        assert!(matches!(
            auth.register("C", "D", "A@X.Y", "hunter22", T0),
            Err(AuthError::EmailTaken)
        ));
        assert!(matches!(
            auth.register("C", "D", "c@x.y", "abcd", T0),
            Err(AuthError::WeakPassword)
        ));
        assert!(matches!(
            auth.register("C", "D", "c@x.y", "1234567", T0),
            Err(AuthError::WeakPassword)
        ));
        assert!(auth.register("C", "D", "c@x.y", "12345678", T0).is_ok());
        for bad in ["nope", "@x.y", "a@b", "a@.b", "a b@x.y", "a@x..y"] {
            assert!(
                matches!(
                    auth.register("C", "D", bad, "hunter22", T0),
                    Err(AuthError::InvalidEmail)
                ),
                "{bad}"
            );
        }
        assert!(matches!(
            auth.register(" ", "D", "z@x.y", "hunter22", T0),
            Err(AuthError::InvalidName)
        ));
    }

    #[test]
    fn verification_is_single_use_and_expires() {
        let (_, _, auth) = setup();
        let (id, token) = auth.register("A", "B", "a@x.y", "hunter22", T0).unwrap();
        assert_eq!(auth.verify_email(&token.token, T0).unwrap(), id);
        assert!(auth.user(&id).unwrap().verified);
        assert!(matches!(
            auth.verify_email(&token.token, T0),
            Err(AuthError::AlreadyUsed)
        ));
        assert!(matches!(
            auth.verify_email("ffff", T0),
            Err(AuthError::UnknownToken)
        ));
        assert!(matches!(
            auth.verify_email("../etc", T0),
            Err(AuthError::UnknownToken)
        ));

        let (_, late) = auth.register("C", "D", "c@x.y", "hunter22", T0).unwrap();
        let expiry_ms = late.expires_at as u64 * 1000;
        assert!(matches!(
            auth.verify_email(&late.token, expiry_ms + 1000),
            Err(AuthError::ExpiredToken)
        ));
        assert!(auth.verify_email(&late.token, expiry_ms).is_ok());
    }

    #[test]
    fn login_gate() {
        let (_, _, auth) = setup();
        let (id, token) = auth.register("A", "B", "a@x.y", "hunter22", T0).unwrap();
        assert!(matches!(
            auth.login("a@x.y", "hunter22", T0),
            Err(AuthError::EmailUnverified)
        ));
        assert!(matches!(
            auth.login("a@x.y", "wrong-password", T0),
            Err(AuthError::BadCredentials)
        ));
        auth.verify_email(&token.token, T0).unwrap();
        let session = auth.login("A@x.y ", "hunter22", T0).unwrap();
        assert_eq!(session.user_id, id);
        assert_eq!(session.expires_at, 1_700_000_000 + 7 * 24 * 3600);
        assert!(matches!(
            auth.login("a@x.y", "wrong-password", T0),
            Err(AuthError::BadCredentials)
        ));
        assert!(matches!(
            auth.login("nobody@x.y", "hunter22", T0),
            Err(AuthError::BadCredentials)
        ));
    }

    #[test]
    fn authenticate_sessions() {
        let (_, _, auth) = setup();
        let (id, token) = auth.register("A", "B", "a@x.y", "hunter22", T0).unwrap();
        auth.verify_email(&token.token, T0).unwrap();
        let session = auth.login("a@x.y", "hunter22", T0).unwrap();
        assert_eq!(auth.authenticate(&session.token, T0).unwrap(), id);
        let end = session.expires_at as u64 * 1000;
        assert!(auth.authenticate(&session.token, end).is_ok());
        assert!(matches!(
            auth.authenticate(&session.token, end + 1000),
            Err(AuthError::Unauthenticated)
        ));
        assert!(matches!(
            auth.authenticate(&random_token(), T0),
            Err(AuthError::Unauthenticated)
        ));
        assert!(matches!(
            auth.authenticate("", T0),
            Err(AuthError::Unauthenticated)
        ));
        auth.logout(&session.token).unwrap();
        assert!(auth.authenticate(&session.token, T0).is_err());
    }

    #[test]
    fn purge_removes_only_expired() {
        let (_, _, auth) = setup();
        let (_, token) = auth.register("A", "B", "a@x.y", "hunter22", T0).unwrap();
        auth.verify_email(&token.token, T0).unwrap();
        let old = auth.login("a@x.y", "hunter22", T0).unwrap();
        let later = T0 + 8 * 24 * 3600 * 1000;
        let fresh = auth.login("a@x.y", "hunter22", later).unwrap();
        assert_eq!(auth.purge_expired_sessions(later).unwrap(), 1);
        assert!(auth.authenticate(&fresh.token, later).is_ok());
        assert!(auth.authenticate(&old.token, T0).is_err());
    }

    #[test]
    fn create_admin_promotes_or_creates() {
        let (_, _, auth) = setup();
        let (id, pw) = auth.create_admin("root@x.y", T0).unwrap();
        let pw = pw.unwrap();
        assert!(auth.is_admin(&id));
        assert!(auth.login("root@x.y", &pw, T0).is_ok());
        let (id2, _) = auth.register("A", "B", "a@x.y", "hunter22", T0).unwrap();
        assert!(!auth.is_admin(&id2));
        let (same, none) = auth.create_admin("a@x.y", T0).unwrap();
        assert_eq!(same, id2);
        assert!(none.is_none());
        assert!(auth.is_admin(&id2));
    }

    #[test]
    fn tokens_are_unique() {
        let tokens: std::collections::HashSet<_> = (0..10_000).map(|_| random_token()).collect();
        assert_eq!(tokens.len(), 10_000);
        assert!(tokens.iter().all(|t| t.len() == 32));
    }
}
