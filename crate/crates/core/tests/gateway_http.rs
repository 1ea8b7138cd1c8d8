mod common;

use std::process::Command;
use std::time::Duration;

use common::{start, test_config, Client, EventReader};
use reqwest::{Method, StatusCode};
use safeguard::gateway::{serve, GatewayError};
use safeguard::treestore::{TreePath, TreeStore, TreeValue};
use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_safeguard");

#[tokio::test]
async fn health_on_an_empty_data_dir() {
    let dir = tempfile::tempdir().unwrap();
    let handle = start(dir.path()).await;
    let c = Client::new(&handle);
    let (status, body) = c.get("/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"status": "ok", "users": 0}));
    let (status, _) = c.get("/app", None).await;
    assert_eq!(status, StatusCode::OK);
    handle.shutdown().await.unwrap();
}

#[tokio::test]
async fn every_protected_route_rejects_the_same_way() {
    let dir = tempfile::tempdir().unwrap();
    let handle = start(dir.path()).await;
    let c = Client::new(&handle);
    let (user, _) = c.signup("Ana", "Das", "ana@x.org").await;

    let expired = "0123456789abcdef0123456789abcdef";
    handle
        .services()
        .store
        .set(
            &TreePath::from_segments(["auth", "sessions", expired]).unwrap(),
            TreeValue::from_pairs([
                ("user_id", TreeValue::from(user.as_str())),
                ("issued_at", 0.into()),
                ("expires_at", 1.into()),
            ]),
        )
        .unwrap();

    let routes = [
        (Method::POST, "/auth/device-token".to_string()),
        (Method::PUT, "/contacts".into()),
        (Method::GET, "/contacts".into()),
        (Method::POST, "/sos".into()),
        (Method::GET, "/alerts".into()),
        (Method::GET, "/nearby?lat=23.8&lon=90.4".into()),
        (Method::GET, "/users/search?q=an".into()),
        (Method::POST, format!("/chats/{user}/messages")),
        (Method::GET, format!("/chats/{user}/messages")),
        (Method::POST, "/presence/checkpoint".into()),
        (Method::GET, format!("/users/{user}/presence")),
        (Method::GET, "/stream".into()),
        (Method::POST, "/admin/broadcast".into()),
    ];
    let expected = json!({"error": {"code": "Unauthenticated", "message": "missing, invalid or expired session"}});
    for (method, path) in routes {
        for token in [None, Some("not-a-session"), Some(expired)] {
            let (status, body) = c
                .call(method.clone(), &path, token, Some(json!({})))
                .await;
            assert_eq!(status, StatusCode::UNAUTHORIZED, "{method} {path} {token:?}");
            assert_eq!(body, expected, "{method} {path}");
        }
    }
    handle.shutdown().await.unwrap();
}

#[tokio::test]
async fn sos_flow_writes_the_sms_outbox_and_cli_tails_it() {
    let dir = tempfile::tempdir().unwrap();
    let handle = start(dir.path()).await;
    let c = Client::new(&handle);
    let (_, token) = c.signup("Nadia", "Rahman", "nadia@x.org").await;

    let (status, body) = c.post("/sos", Some(&token), json!({"lat": 23.8, "lon": 90.4})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "NoContactsSet");

    let (status, body) = c
        .put("/contacts", Some(&token), json!({"numbers": ["+1", "+8801711000001"]}))
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "InvalidNumber");

    let (status, _) = c
        .put(
            "/contacts",
            Some(&token),
            json!({"numbers": ["+8801711000001", "+8801711000002"]}),
        )
        .await;
    assert_eq!(status, StatusCode::OK);
    let (_, contacts) = c.get("/contacts", Some(&token)).await;
    assert_eq!(contacts["contacts"].as_array().unwrap().len(), 2);

    let (status, alert) = c
        .post("/sos", Some(&token), json!({"lat": 23.8103, "lon": 90.4125}))
        .await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(alert["deliveries"].as_array().unwrap().len(), 2);
    let (_, alerts) = c.get("/alerts", Some(&token)).await;
    assert_eq!(alerts["alerts"][0]["alert_id"], alert["alert_id"]);
    assert_eq!(c.outbox_lines("sms-outbox.log").len(), 2);
    handle.shutdown().await.unwrap();

    let config_file = dir.path().join("service.conf");
    std::fs::write(&config_file, format!("data_dir = {}\n", dir.path().display())).unwrap();
    let out = Command::new(BIN)
        .args(["outbox", "tail", "sms"])
        .env("SAFEGUARD_CONFIG", &config_file)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.contains("23.810300,90.412500"));
}

#[tokio::test]
async fn chat_stream_then_push_outbox_after_close() {
    let dir = tempfile::tempdir().unwrap();
    let handle = start(dir.path()).await;
    let c = Client::new(&handle);
    let (alice, ta) = c.signup("Alice", "Khan", "alice@x.org").await;
    let (bob, tb) = c.signup("Bob", "Roy", "bob@x.org").await;
    let (status, _) = c
        .post("/auth/device-token", Some(&tb), json!({"token": "bob-phone"}))
        .await;
    assert_eq!(status, StatusCode::OK);

    let mut stream = EventReader::open(&c, &tb).await.unwrap();
    assert!(common::wait_until(Duration::from_secs(2), || handle.services().hub.is_streaming(&bob)).await);

    let mut sent = Vec::new();
    for i in 0..5 {
        let (status, m) = c
            .post(&format!("/chats/{bob}/messages"), Some(&ta), json!({"body": format!("hi {i}")}))
            .await;
        assert_eq!(status, StatusCode::CREATED);
        sent.push(m["id"].as_str().unwrap().to_string());
    }
    let mut received = Vec::new();
    while received.len() < sent.len() {
        let e = stream.next(Duration::from_secs(3)).await.expect("stream event");
        if e.event == "message" {
            assert_eq!(e.data["peer_id"], alice.as_str());
            assert_eq!(e.id.as_deref(), e.data["id"].as_str());
            received.push(e.data["id"].as_str().unwrap().to_string());
        }
    }
    assert_eq!(received, sent);
    let mut sorted = sent.clone();
    sorted.sort();
    assert_eq!(sorted, sent, "push-id order equals send order");

    let (_, history) = c.get(&format!("/chats/{alice}/messages?limit=2"), Some(&tb)).await;
    let page: Vec<_> = history["messages"].as_array().unwrap().iter().map(|m| m["id"].clone()).collect();
    assert_eq!(page, [json!(sent[0]), json!(sent[1])]);
    let (_, rest) = c
        .get(&format!("/chats/{alice}/messages?after={}", sent[1]), Some(&tb))
        .await;
    assert_eq!(rest["messages"].as_array().unwrap().len(), 3);

    assert!(common::wait_until(Duration::from_secs(3), || c.outbox_lines("push-outbox.log").len() == 5).await);

    drop(stream);
    assert!(common::wait_until(Duration::from_secs(2), || !handle.services().hub.is_streaming(&bob)).await);
    c.post(&format!("/chats/{bob}/messages"), Some(&ta), json!({"body": "are you there?"}))
        .await;
    assert!(common::wait_until(Duration::from_secs(3), || c.outbox_lines("push-outbox.log").len() == 6).await);
    let last = c.outbox_lines("push-outbox.log").pop().unwrap();
    let fields: Vec<_> = last.split('\t').collect();
    assert_eq!(fields[1..3], ["bob-phone", "chat-message"]);
    let payload: Value = serde_json::from_str(fields[3]).unwrap();
    assert_eq!(payload["preview"], "are you there?");
    assert_eq!(payload["sender_name"], "Alice Khan");
    handle.shutdown().await.unwrap();
}

#[tokio::test]
async fn presence_changes_reach_partners() {
    let dir = tempfile::tempdir().unwrap();
    let handle = start(dir.path()).await;
    let c = Client::new(&handle);
    let (alice, ta) = c.signup("Alice", "Khan", "alice@x.org").await;
    let (bob, tb) = c.signup("Bob", "Roy", "bob@x.org").await;
    c.post(&format!("/chats/{bob}/messages"), Some(&ta), json!({"body": "hello"}))
        .await;

    let mut stream = EventReader::open(&c, &tb).await.unwrap();
    assert!(common::wait_until(Duration::from_secs(2), || handle.services().hub.is_streaming(&bob)).await);
    let (status, body) = c
        .post("/presence/checkpoint", Some(&ta), json!({"name": "chat-open"}))
        .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let e = loop {
        let e = stream.next(Duration::from_secs(3)).await.expect("presence event");
        if e.event == "presence" {
            break e;
        }
    };
    assert_eq!(e.data["user_id"], alice.as_str());
    assert_eq!(e.data["state"], "active");

    let (_, p) = c.get(&format!("/users/{alice}/presence"), Some(&tb)).await;
    assert_eq!(p["state"], "active");
    let (status, body) = c
        .post("/presence/checkpoint", Some(&ta), json!({"name": "dance"}))
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "UnknownCheckpoint");

    let (_, hits) = c.get("/users/search?q=KH", Some(&tb)).await;
    assert_eq!(hits["users"][0]["user_id"], alice.as_str());
    handle.shutdown().await.unwrap();
}

#[tokio::test]
async fn stream_refuses_bad_tokens_and_accepts_query_tokens() {
    let dir = tempfile::tempdir().unwrap();
    let handle = start(dir.path()).await;
    let c = Client::new(&handle);
    assert_eq!(
        EventReader::open(&c, "nope").await.err(),
        Some(StatusCode::UNAUTHORIZED)
    );
    let (user, token) = c.signup("Ana", "Das", "ana@x.org").await;
    let resp = c
        .http
        .get(format!("{}/stream?access_token={token}", c.base))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert!(common::wait_until(Duration::from_secs(2), || handle.services().hub.is_streaming(&user)).await);
    drop(resp);
    handle.shutdown().await.unwrap();
}

#[tokio::test]
async fn admin_broadcast_reaches_all_tokens() {
    let dir = tempfile::tempdir().unwrap();
    let handle = start(dir.path()).await;
    let c = Client::new(&handle);
    let (admin, ta) = c.signup("Site", "Admin", "admin@x.org").await;
    let (_, tb) = c.signup("Bob", "Roy", "bob@x.org").await;
    for (t, device) in [(&ta, "admin-phone"), (&tb, "bob-phone"), (&tb, "bob-tab")] {
        c.post("/auth/device-token", Some(t), json!({"token": device})).await;
    }
    let (status, body) = c
        .post("/admin/broadcast", Some(&tb), json!({"title": "x", "body": "y"}))
        .await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert_eq!(body["error"]["code"], "Forbidden");

    handle.services().auth.grant_admin(&admin).unwrap();
    let (status, _) = c
        .post("/admin/broadcast", Some(&ta), json!({"title": "Drill", "body": "Fire drill at noon"}))
        .await;
    assert_eq!(status, StatusCode::CREATED);
    assert!(common::wait_until(Duration::from_secs(3), || c.outbox_lines("push-outbox.log").len() == 3).await);
    assert!(c
        .outbox_lines("push-outbox.log")
        .iter()
        .all(|l| l.split('\t').nth(2) == Some("admin-broadcast")));
    handle.shutdown().await.unwrap();
}

#[tokio::test]
async fn malformed_bodies_get_the_error_shape() {
    let dir = tempfile::tempdir().unwrap();
    let handle = start(dir.path()).await;
    let c = Client::new(&handle);
    let (status, body) = c.post("/auth/login", None, json!({"email": 3})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "InvalidRequest");
    let (status, body) = c
        .post("/auth/login", None, json!({"email": "who@x.org", "password": "whatever1"}))
        .await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert_eq!(body["error"]["code"], "BadCredentials");
    let (_, token) = c.signup("Ana", "Das", "ana@x.org").await;
    let (status, body) = c.get("/nearby?lat=23.8&lon=90.4", Some(&token)).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["error"]["code"], "EmptyIndex");
    let (status, body) = c.get("/nearby?lat=91&lon=90.4", Some(&token)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "LatitudeOutOfRange");
    handle.shutdown().await.unwrap();
}

#[tokio::test]
async fn second_bind_on_the_same_port_fails() {
    let dir = tempfile::tempdir().unwrap();
    let first = start(dir.path()).await;
    let other = tempfile::tempdir().unwrap();
    let mut config = test_config(other.path());
    config.bind = first.addr();
    assert!(matches!(serve(config).await, Err(GatewayError::BindFailure { .. })));
    first.shutdown().await.unwrap();
}

#[tokio::test]
async fn state_survives_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let handle = start(dir.path()).await;
    let c = Client::new(&handle);
    for i in 0..5 {
        c.signup("User", &format!("N{i}"), &format!("u{i}@x.org")).await;
    }
    let before = handle.services().store.get(&TreePath::root());
    let commit = handle.shutdown().await.unwrap();

    let on_disk = TreeStore::load_from(&dir.path().join("tree.snapshot")).unwrap();
    assert_eq!(on_disk.get(&TreePath::root()), before);
    assert_eq!(on_disk.commit_number(), commit);

    let handle = start(dir.path()).await;
    let c = Client::new(&handle);
    let (_, body) = c.get("/health", None).await;
    assert_eq!(body["users"], 5);
    let (status, _) = c
        .post("/auth/login", None, json!({"email": "u3@x.org", "password": "correct horse"}))
        .await;
    assert_eq!(status, StatusCode::OK);
    handle.shutdown().await.unwrap();
}

#[tokio::test]
async fn corrupt_snapshot_refuses_to_start() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tree.snapshot"), "garbage\n").unwrap();
    assert!(matches!(
        serve(test_config(dir.path())).await,
        Err(GatewayError::Store(_))
    ));
}

#[test]
fn cli_rejects_unknown_commands() {
    let out = Command::new(BIN).arg("unknown-cmd").output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn cli_seeds_places_and_creates_admins() {
    let dir = tempfile::tempdir().unwrap();
    let config_file = dir.path().join("service.conf");
    std::fs::write(
        &config_file,
        format!("data_dir = {}\npassword_iterations = 4096\n", dir.path().display()),
    )
    .unwrap();
    let csv = concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic_dhaka_pois.csv");
    let out = Command::new(BIN)
        .args(["--config", config_file.to_str().unwrap(), "seed-pois", csv])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "accepted 75 rejected 0");
    assert!(dir.path().join("pois.csv").exists());

    let out = Command::new(BIN)
        .args(["--config", config_file.to_str().unwrap(), "create-admin", "root@x.org"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("created admin"));

    let out = Command::new(BIN)
        .args(["--config", "/nonexistent/service.conf", "serve"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stderr).lines().count(), 1);
}
