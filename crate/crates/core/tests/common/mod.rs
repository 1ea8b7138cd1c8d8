#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use futures::StreamExt;
use reqwest::StatusCode;
use safeguard::auth::{password, read_token_from_eml, Auth, AuthConfig, MemoryMailer};
use safeguard::gateway::{serve, ServerHandle, ServiceConfig};
use safeguard::treestore::TreeStore;
use serde_json::{json, Value};

pub fn fast_auth_config() -> AuthConfig {
    AuthConfig {
        password_iterations: password::MIN_ITERATIONS,
        ..AuthConfig::default()
    }
}

pub fn new_auth(store: &Arc<TreeStore>) -> (Auth, Arc<MemoryMailer>) {
    let mailer = Arc::new(MemoryMailer::new());
    (
        Auth::new(store.clone(), mailer.clone(), fast_auth_config()),
        mailer,
    )
}

/// Registers and verifies an account, returning its id.
pub fn verified_user(
    auth: &Auth,
    mailer: &MemoryMailer,
    first: &str,
    last: &str,
    email: &str,
    now_ms: u64,
) -> String {
    let (id, _) = auth
        .register(first, last, email, "correct horse", now_ms)
        .unwrap();
    auth.verify_email(&mailer.last_token().unwrap(), now_ms)
        .unwrap();
    id
}

pub fn test_config(dir: &Path) -> ServiceConfig {
    ServiceConfig {
        bind: "127.0.0.1:0".parse().unwrap(),
        data_dir: dir.to_path_buf(),
        password_iterations: password::MIN_ITERATIONS,
        ..ServiceConfig::default()
    }
}

pub async fn start(dir: &Path) -> ServerHandle {
    serve(test_config(dir)).await.unwrap()
}

pub struct Client {
    pub http: reqwest::Client,
    pub base: String,
    pub outbox: std::path::PathBuf,
}

impl Client {
    pub fn new(handle: &ServerHandle) -> Self {
        Self {
            http: reqwest::Client::new(),
            base: format!("http://{}", handle.addr()),
            outbox: handle.services().config.outbox_dir(),
        }
    }

    pub async fn call(
        &self,
        method: reqwest::Method,
        path: &str,
        token: Option<&str>,
        body: Option<Value>,
    ) -> (StatusCode, Value) {
        let mut req = self.http.request(method, format!("{}{}", self.base, path));
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send().await.unwrap();
        let status = resp.status();
        let text = resp.text().await.unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
    }

    pub async fn get(&self, path: &str, token: Option<&str>) -> (StatusCode, Value) {
        self.call(reqwest::Method::GET, path, token, None).await
    }

    pub async fn post(&self, path: &str, token: Option<&str>, body: Value) -> (StatusCode, Value) {
        self.call(reqwest::Method::POST, path, token, Some(body))
            .await
    }

    pub async fn put(&self, path: &str, token: Option<&str>, body: Value) -> (StatusCode, Value) {
        self.call(reqwest::Method::PUT, path, token, Some(body)).await
    }

    /// Newest verification token addressed to `email` in the mail outbox.
    pub fn mailed_token(&self, email: &str) -> String {
        let mut mails: Vec<_> = std::fs::read_dir(&self.outbox)
            .unwrap()
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "eml"))
            .filter(|p| {
                std::fs::read_to_string(p)
                    .unwrap()
                    .contains(&format!("To: {email}"))
            })
            .collect();
        mails.sort();
        read_token_from_eml(mails.last().expect("mail for address"))
            .unwrap()
            .unwrap()
    }

    /// Register, verify and log in; returns `(user_id, session_token)`.
    pub async fn signup(&self, first: &str, last: &str, email: &str) -> (String, String) {
        let (status, body) = self
            .post(
                "/auth/register",
                None,
                json!({"first_name": first, "last_name": last, "email": email, "password": "correct horse"}),
            )
            .await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        let token = self.mailed_token(email);
        let (status, _) = self
            .post("/auth/verify", None, json!({"token": token}))
            .await;
        assert_eq!(status, StatusCode::OK);
        let (status, body) = self
            .post(
                "/auth/login",
                None,
                json!({"email": email, "password": "correct horse"}),
            )
            .await;
        assert_eq!(status, StatusCode::OK, "{body}");
        (
            body["user_id"].as_str().unwrap().to_string(),
            body["token"].as_str().unwrap().to_string(),
        )
    }

    pub fn outbox_lines(&self, file: &str) -> Vec<String> {
        std::fs::read_to_string(self.outbox.join(file))
            .unwrap_or_default()
            .lines()
            .map(str::to_string)
            .collect()
    }
}

/// Minimal server-sent-events reader.
pub struct EventReader {
    stream: futures::stream::BoxStream<'static, reqwest::Result<Vec<u8>>>,
    buf: String,
}

#[derive(Debug, Clone)]
pub struct SseEvent {
    pub event: String,
    pub id: Option<String>,
    pub data: Value,
}

impl EventReader {
    pub async fn open(client: &Client, token: &str) -> Result<Self, StatusCode> {
        let resp = client
            .http
            .get(format!("{}/stream", client.base))
            .bearer_auth(token)
            .send()
            .await
            .unwrap();
        if resp.status() != StatusCode::OK {
            return Err(resp.status());
        }
        Ok(Self {
            stream: resp.bytes_stream().map(|r| r.map(|b| b.to_vec())).boxed(),
            buf: String::new(),
        })
    }

    /// Next non-keepalive event, or `None` on timeout or end of stream.
    pub async fn next(&mut self, timeout: Duration) -> Option<SseEvent> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            if let Some(end) = self.buf.find("\n\n") {
                let block: String = self.buf.drain(..end + 2).collect();
                let mut event = SseEvent {
                    event: "message".into(),
                    id: None,
                    data: Value::Null,
                };
                let mut data = String::new();
                for line in block.lines() {
                    if let Some(v) = line.strip_prefix("event:") {
                        event.event = v.trim().to_string();
                    } else if let Some(v) = line.strip_prefix("id:") {
                        event.id = Some(v.trim().to_string());
                    } else if let Some(v) = line.strip_prefix("data:") {
                        data.push_str(v.trim_start());
                    }
                }
                if data.is_empty() {
                    continue;
                }
                event.data = serde_json::from_str(&data).unwrap_or(Value::String(data));
                return Some(event);
            }
            let chunk = tokio::time::timeout_at(deadline, self.stream.next())
                .await
                .ok()??
                .ok()?;
            self.buf.push_str(&String::from_utf8_lossy(&chunk));
        }
    }
}

pub async fn wait_until<F: Fn() -> bool>(timeout: Duration, f: F) -> bool {
    let deadline = tokio::time::Instant::now() + timeout;
    while tokio::time::Instant::now() < deadline {
        if f() {
            return true;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    f()
}
