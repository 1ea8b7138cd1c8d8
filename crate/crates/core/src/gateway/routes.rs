use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use super::error::ApiError;
use super::stream::{StreamEvent, StreamEventKind};
use super::Services;
use crate::geo::{Category, GeoPoint, NearbyQuery};
use crate::time::now_ms;

type AppState = Arc<Services>;
type ApiResult<T> = Result<T, ApiError>;
type Body<T> = Result<Json<T>, JsonRejection>;
type Params<T> = Result<Query<T>, QueryRejection>;

pub const DEFAULT_SEARCH_LIMIT: usize = 20;
pub const DEFAULT_PAGE_LIMIT: usize = 50;
pub const MAX_PAGE_LIMIT: usize = 500;

pub fn router(state: AppState) -> Router {
    let app: Router<AppState> = match &state.config.static_dir {
        Some(dir) => Router::new().nest_service("/app", ServeDir::new(dir)),
        None => Router::new().route("/app", get(placeholder_app)),
    };
    app.route("/health", get(health))
        .route("/auth/register", post(register))
        .route("/auth/verify", post(verify))
        .route("/auth/login", post(login))
        .route("/auth/device-token", post(device_token))
        .route("/contacts", get(get_contacts).put(put_contacts))
        .route("/sos", post(trigger_sos))
        .route("/alerts", get(list_alerts))
        .route("/nearby", get(nearby))
        .route("/users/search", get(search_users))
        .route("/users/{id}/presence", get(presence))
        .route(
            "/chats/{peer}/messages",
            get(get_messages).post(send_message),
        )
        .route("/presence/checkpoint", post(checkpoint))
        .route("/stream", get(open_stream))
        .route("/admin/broadcast", post(broadcast))
        .with_state(state)
}

/// The session's user id. Any protected route rejects a missing, unknown or
/// expired session with [`ApiError::unauthenticated`].
pub struct SessionUser(pub String);

#[derive(Deserialize)]
struct TokenParam {
    access_token: Option<String>,
}

impl FromRequestParts<AppState> for SessionUser {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> ApiResult<Self> {
        let header_token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(|t| t.trim().to_string());
        // Browsers cannot set headers on an EventSource.
        let token = header_token.or_else(|| {
            (parts.uri.path() == "/stream")
                .then(|| Query::<TokenParam>::try_from_uri(&parts.uri).ok())
                .flatten()
                .and_then(|q| q.0.access_token)
        });
        let token = token.ok_or_else(ApiError::unauthenticated)?;
        state
            .auth
            .authenticate(&token, now_ms())
            .map(SessionUser)
            .map_err(|_| ApiError::unauthenticated())
    }
}

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(|e| {
        tracing::error!(error = %e, "blocking task failed");
        ApiError::internal()
    })?
}

async fn placeholder_app() -> Html<&'static str> {
    Html("<!doctype html><title>safeguard</title><p>Web client not installed. Set <code>static_dir</code> to serve it here.</p>")
}

async fn health(State(s): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({"status": "ok", "users": s.auth.user_count()}))
}

#[derive(Deserialize)]
struct RegisterRequest {
    first_name: String,
    last_name: String,
    email: String,
    password: String,
}

async fn register(State(s): State<AppState>, body: Body<RegisterRequest>) -> ApiResult<Response> {
    let Json(req) = body?;
    let user_id = blocking(move || {
        let (id, _) = s.auth.register(
            &req.first_name,
            &req.last_name,
            &req.email,
            &req.password,
            now_ms(),
        )?;
        Ok(id)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(json!({"user_id": user_id}))).into_response())
}

#[derive(Deserialize)]
struct VerifyRequest {
    token: String,
}

async fn verify(
    State(s): State<AppState>,
    body: Body<VerifyRequest>,
) -> ApiResult<Json<serde_json::Value>> {
    let Json(req) = body?;
    let user_id = s.auth.verify_email(&req.token, now_ms())?;
    Ok(Json(json!({"user_id": user_id, "verified": true})))
}

#[derive(Deserialize)]
struct LoginRequest {
    email: String,
    password: String,
}

async fn login(
    State(s): State<AppState>,
    body: Body<LoginRequest>,
) -> ApiResult<Json<serde_json::Value>> {
    let Json(req) = body?;
    let session = blocking(move || {
        let now = now_ms();
        let session = s.auth.login(&req.email, &req.password, now)?;
        if s.chat.config().checkpoints.iter().any(|c| c == "login") {
            s.chat.checkpoint(&session.user_id, "login", now)?;
        }
        Ok(session)
    })
    .await?;
    Ok(Json(json!({
        "token": session.token,
        "user_id": session.user_id,
        "expires_at": session.expires_at,
    })))
}

#[derive(Deserialize)]
struct DeviceTokenRequest {
    token: String,
}

async fn device_token(
    State(s): State<AppState>,
    SessionUser(user): SessionUser,
    body: Body<DeviceTokenRequest>,
) -> ApiResult<Json<serde_json::Value>> {
    let Json(req) = body?;
    s.auth.register_device_token(&user, &req.token, now_ms())?;
    s.notifier.wake();
    Ok(Json(json!({"registered": true})))
}

#[derive(Deserialize)]
struct ContactsRequest {
    numbers: Vec<String>,
}

async fn put_contacts(
    State(s): State<AppState>,
    SessionUser(user): SessionUser,
    body: Body<ContactsRequest>,
) -> ApiResult<Response> {
    let Json(req) = body?;
    Ok(Json(s.sos.set_contacts(&user, &req.numbers)?).into_response())
}

async fn get_contacts(
    State(s): State<AppState>,
    SessionUser(user): SessionUser,
) -> ApiResult<Response> {
    let contacts = s
        .sos
        .get_contacts(&user)?
        .ok_or(crate::sos::SosError::NoContactsSet)?;
    Ok(Json(contacts).into_response())
}

#[derive(Deserialize)]
struct SosRequest {
    lat: f64,
    lon: f64,
}

async fn trigger_sos(
    State(s): State<AppState>,
    SessionUser(user): SessionUser,
    body: Body<SosRequest>,
) -> ApiResult<Response> {
    let Json(req) = body?;
    let location = GeoPoint::new(req.lat, req.lon)?;
    let alert = s.sos.trigger_sos(&user, location, now_ms())?;
    s.hub.send(
        &user,
        StreamEvent {
            kind: StreamEventKind::Sos,
            data: serde_json::to_value(&alert).unwrap_or_default(),
        },
    );
    Ok((StatusCode::CREATED, Json(alert)).into_response())
}

async fn list_alerts(
    State(s): State<AppState>,
    SessionUser(user): SessionUser,
) -> ApiResult<Response> {
    Ok(Json(json!({"alerts": s.sos.list_alerts(&user)?})).into_response())
}

#[derive(Deserialize)]
struct NearbyParams {
    lat: f64,
    lon: f64,
    category: Option<String>,
    k: Option<usize>,
    radius: Option<f64>,
}

async fn nearby(
    State(s): State<AppState>,
    SessionUser(_): SessionUser,
    params: Params<NearbyParams>,
) -> ApiResult<Json<serde_json::Value>> {
    let Query(p) = params?;
    let category = match p.category.as_deref() {
        None | Some("") | Some("all") => None,
        Some(c) => Some(c.parse::<Category>()?),
    };
    let query = NearbyQuery {
        center: GeoPoint::new(p.lat, p.lon)?,
        category,
        k: p.k.unwrap_or(s.config.nearby_k),
        radius_m: p.radius.unwrap_or(s.config.nearby_radius_m),
    };
    let results: Vec<_> = s
        .pois
        .nearby(&query)?
        .into_iter()
        .map(|n| {
            json!({
                "id": n.poi.id,
                "name": n.poi.name,
                "category": n.poi.category,
                "lat": n.poi.location.lat(),
                "lon": n.poi.location.lon(),
                "distance_m": n.distance_m,
            })
        })
        .collect();
    Ok(Json(json!({"results": results})))
}

#[derive(Deserialize)]
struct SearchParams {
    q: String,
    limit: Option<usize>,
}

async fn search_users(
    State(s): State<AppState>,
    SessionUser(_): SessionUser,
    params: Params<SearchParams>,
) -> ApiResult<Json<serde_json::Value>> {
    let Query(p) = params?;
    let limit = p.limit.unwrap_or(DEFAULT_SEARCH_LIMIT).min(MAX_PAGE_LIMIT);
    let users = s.chat.search_users(&p.q, limit, now_ms())?;
    Ok(Json(json!({"users": users})))
}

async fn presence(
    State(s): State<AppState>,
    SessionUser(_): SessionUser,
    Path(id): Path<String>,
) -> ApiResult<Json<serde_json::Value>> {
    let p = s.chat.presence(&id, now_ms())?;
    Ok(Json(json!({
        "user_id": id,
        "state": p.state,
        "seconds_since": p.seconds_since,
    })))
}

#[derive(Deserialize)]
struct MessageRequest {
    body: String,
}

async fn send_message(
    State(s): State<AppState>,
    SessionUser(user): SessionUser,
    Path(peer): Path<String>,
    body: Body<MessageRequest>,
) -> ApiResult<Response> {
    let Json(req) = body?;
    let message = s.chat.send_message(&user, &peer, &req.body, now_ms())?;
    Ok((StatusCode::CREATED, Json(message)).into_response())
}

#[derive(Deserialize)]
struct PageParams {
    after: Option<String>,
    limit: Option<usize>,
}

async fn get_messages(
    State(s): State<AppState>,
    SessionUser(user): SessionUser,
    Path(peer): Path<String>,
    params: Params<PageParams>,
) -> ApiResult<Json<serde_json::Value>> {
    let Query(p) = params?;
    let limit = p.limit.unwrap_or(DEFAULT_PAGE_LIMIT).min(MAX_PAGE_LIMIT);
    let messages = s
        .chat
        .get_conversation(&user, &peer, p.after.as_deref(), limit)?;
    Ok(Json(json!({"messages": messages})))
}

#[derive(Deserialize)]
struct CheckpointRequest {
    name: String,
}

async fn checkpoint(
    State(s): State<AppState>,
    SessionUser(user): SessionUser,
    body: Body<CheckpointRequest>,
) -> ApiResult<Json<serde_json::Value>> {
    let Json(req) = body?;
    let at = s.chat.checkpoint(&user, &req.name, now_ms())?;
    Ok(Json(json!({"name": req.name, "at": at})))
}

async fn open_stream(
    State(s): State<AppState>,
    SessionUser(user): SessionUser,
) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let (guard, rx) = s.hub.open(&user);
    tracing::debug!(%user, "stream opened");
    let events = stream::unfold((rx, guard), |(mut rx, guard)| async move {
        let event = rx.recv().await?;
        let mut sse = Event::default()
            .event(event.kind.as_str())
            .data(event.data.to_string());
        if event.kind == StreamEventKind::Message {
            if let Some(id) = event.data.get("id").and_then(|v| v.as_str()) {
                sse = sse.id(id);
            }
        }
        Some((Ok(sse), (rx, guard)))
    });
    Sse::new(events).keep_alive(KeepAlive::new().interval(Duration::from_secs(15)))
}

#[derive(Deserialize)]
struct BroadcastRequest {
    title: String,
    body: String,
}

async fn broadcast(
    State(s): State<AppState>,
    SessionUser(user): SessionUser,
    body: Body<BroadcastRequest>,
) -> ApiResult<Response> {
    if !s.auth.is_admin(&user) {
        return Err(ApiError::forbidden());
    }
    let Json(req) = body?;
    let id = s.notifier.broadcast(&req.title, &req.body, now_ms())?;
    Ok((
        StatusCode::CREATED,
        Json(json!({"broadcast_id": id.as_str()})),
    )
        .into_response())
}
