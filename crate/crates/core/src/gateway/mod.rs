//! HTTP service shell: configuration, routing, sessions, live streams and
//! periodic snapshots.

mod config;
mod error;
mod routes;
mod stream;

use std::io;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Weak};

use parking_lot::Mutex;
use serde_json::json;
use thiserror::Error;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::auth::{Auth, DeviceRegistry, OutboxMailer};
use crate::chat::{split_conversation_key, Chat, ChatConfig, Message};
use crate::geo::{GeoError, IngestReport, PoiDirectory};
use crate::notify::{DispatchWorker, Notifier, OutboxPushSink, PushSink};
use crate::sos::{OutboxSmsGateway, Sos, SmsError, SmsGateway};
use crate::treestore::{Subscription, TreeError, TreeStore, TriggerRegistration};

pub use config::{ConfigError, ServiceConfig, SinkMode, CONFIG_ENV};
pub use error::ApiError;
pub use routes::router;
pub use stream::{ForwardingPushSink, StreamEvent, StreamEventKind, StreamGuard, StreamHub};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure { addr: SocketAddr, source: io::Error },
    #[error("data directory {path}: {source}")]
    DataDir { path: String, source: io::Error },
    #[error(transparent)]
    Store(#[from] TreeError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("server: {0}")]
    Server(#[from] io::Error),
}

struct DiscardSms;

impl SmsGateway for DiscardSms {
    fn send(&self, _: &str, _: &str, now_ms: u64) -> Result<String, SmsError> {
        Ok(format!("discarded-{now_ms}"))
    }
}

/// Everything a request handler needs, wired over one tree store.
pub struct Services {
    pub config: ServiceConfig,
    pub store: Arc<TreeStore>,
    pub auth: Auth,
    pub sos: Sos,
    pub chat: Chat,
    pub pois: PoiDirectory,
    pub notifier: Arc<Notifier>,
    pub hub: Arc<StreamHub>,
    saved_commit: AtomicU64,
    worker: Mutex<Option<DispatchWorker>>,
    _subscriptions: Vec<Subscription>,
}

fn data_dir_error(path: &Path) -> impl FnOnce(io::Error) -> GatewayError + '_ {
    move |source| GatewayError::DataDir {
        path: path.display().to_string(),
        source,
    }
}

impl Services {
    /// Restores the store from the data directory and wires every module.
    pub fn open(config: ServiceConfig) -> Result<Arc<Self>, GatewayError> {
        config.validate()?;
        let outbox = config.outbox_dir();
        std::fs::create_dir_all(&outbox).map_err(data_dir_error(&outbox))?;

        let store = Arc::new(TreeStore::load_from(&config.snapshot_file())?);
        let mailer = Arc::new(OutboxMailer::new(&outbox).map_err(data_dir_error(&outbox))?);
        let sms: Arc<dyn SmsGateway> = match config.sms_mode {
            SinkMode::Outbox => Arc::new(
                OutboxSmsGateway::open(&outbox, config.sms_fail_fraction)
                    .map_err(data_dir_error(&outbox))?,
            ),
            SinkMode::Discard => Arc::new(DiscardSms),
        };
        let push_outbox: Option<Arc<dyn PushSink>> = match config.push_mode {
            SinkMode::Outbox => Some(Arc::new(
                OutboxPushSink::open(&outbox).map_err(data_dir_error(&outbox))?,
            )),
            SinkMode::Discard => None,
        };

        let hub = StreamHub::new();
        let sink = Arc::new(ForwardingPushSink::new(
            push_outbox,
            hub.clone(),
            DeviceRegistry::new(store.clone()),
        ));
        let notifier = Arc::new(Notifier::new(store.clone(), sink, config.notify_config()));
        let mut subscriptions = notifier.install()?;
        subscriptions.extend(install_stream_triggers(&store, &hub, config.chat_config())?);

        let pois = PoiDirectory::new(config.grid_cell_deg)?;
        let pois_file = config.pois_file();
        if pois_file.exists() {
            let report = pois.ingest_file(&pois_file)?;
            tracing::info!(
                accepted = report.accepted,
                rejected = report.rejected.len(),
                "loaded places"
            );
        }

        let worker = notifier.spawn_worker(|records| {
            tracing::debug!(count = records.len(), "dispatched notifications");
        });

        Ok(Arc::new(Self {
            auth: Auth::new(store.clone(), mailer, config.auth_config()),
            sos: Sos::new(store.clone(), sms),
            chat: Chat::new(store.clone(), config.chat_config()),
            saved_commit: AtomicU64::new(store.commit_number()),
            store,
            pois,
            notifier,
            hub,
            worker: Mutex::new(Some(worker)),
            _subscriptions: subscriptions,
            config,
        }))
    }

    /// Writes a snapshot when there are commits since the last one.
    pub fn snapshot_if_dirty(&self) -> Result<Option<u64>, GatewayError> {
        let commit = self.store.commit_number();
        if commit == self.saved_commit.load(Ordering::Acquire) {
            return Ok(None);
        }
        let saved = self.store.save_to(&self.config.snapshot_file())?;
        self.saved_commit.store(saved, Ordering::Release);
        tracing::debug!(commit = saved, "snapshot written");
        Ok(Some(saved))
    }

    /// Stops background work and persists the final state.
    pub fn shutdown(&self) -> Result<u64, GatewayError> {
        if let Some(worker) = self.worker.lock().take() {
            worker.stop();
        }
        self.store.flush();
        self.snapshot_if_dirty()?;
        Ok(self.store.commit_number())
    }
}

/// Mirrors new messages and checkpoint visits onto live streams.
fn install_stream_triggers(
    store: &Arc<TreeStore>,
    hub: &Arc<StreamHub>,
    chat_config: ChatConfig,
) -> Result<Vec<Subscription>, TreeError> {
    let messages = {
        let hub = hub.clone();
        store.subscribe(
            TriggerRegistration::new("chats/*/messages/*", "gateway.stream.message")?,
            move |event| {
                if !event.old.is_absent() {
                    return;
                }
                let segments = event.path.segments();
                let Some(message) = Message::from_tree(&segments[3], &event.new) else {
                    return;
                };
                let Some((a, b)) = split_conversation_key(&segments[1]) else {
                    return;
                };
                for (me, peer) in [(a, b), (b, a)] {
                    let mut data = serde_json::to_value(&message).unwrap_or_default();
                    data["peer_id"] = json!(peer);
                    hub.send(
                        me,
                        StreamEvent {
                            kind: StreamEventKind::Message,
                            data,
                        },
                    );
                }
            },
        )?
    };

    let hub = hub.clone();
    let weak: Weak<TreeStore> = Arc::downgrade(store);
    let presence = store.subscribe(
        TriggerRegistration::new("presence/*/*", "gateway.stream.presence")?,
        move |event| {
            let Some(store) = weak.upgrade() else { return };
            let user = &event.path.segments()[1];
            let chat = Chat::new(store, chat_config.clone());
            let Ok(presence) = chat.presence(user, crate::time::now_ms()) else {
                return;
            };
            let data = json!({
                "user_id": user,
                "checkpoint": event.path.last(),
                "state": presence.state,
                "seconds_since": presence.seconds_since,
            });
            for partner in chat.partners(user) {
                hub.send(
                    &partner,
                    StreamEvent {
                        kind: StreamEventKind::Presence,
                        data: data.clone(),
                    },
                );
            }
        },
    )?;
    Ok(vec![messages, presence])
}

/// A running service.
pub struct ServerHandle {
    addr: SocketAddr,
    services: Arc<Services>,
    stop: Option<oneshot::Sender<()>>,
    server: JoinHandle<io::Result<()>>,
    snapshotter: JoinHandle<()>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn services(&self) -> &Arc<Services> {
        &self.services
    }

    /// Graceful stop: closes streams, drains requests, writes a snapshot.
    /// Returns the commit number the snapshot holds.
    pub async fn shutdown(mut self) -> Result<u64, GatewayError> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        self.services.hub.close_all();
        self.snapshotter.abort();
        match (&mut self.server).await {
            Ok(result) => result?,
            Err(e) => tracing::error!(error = %e, "server task failed"),
        }
        let services = self.services.clone();
        tokio::task::spawn_blocking(move || services.shutdown())
            .await
            .map_err(|e| GatewayError::Server(io::Error::other(e)))?
    }

    /// Serves until Ctrl-C, then shuts down.
    pub async fn run_until_ctrl_c(self) -> Result<u64, GatewayError> {
        tokio::signal::ctrl_c().await?;
        tracing::info!("shutting down");
        self.shutdown().await
    }
}

/// Restores state from `config.data_dir`, binds, and starts serving.
pub async fn serve(config: ServiceConfig) -> Result<ServerHandle, GatewayError> {
    let bind = config.bind;
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .map_err(|source| GatewayError::BindFailure { addr: bind, source })?;
    let addr = listener.local_addr()?;
    let services = tokio::task::spawn_blocking(move || Services::open(config))
        .await
        .map_err(|e| GatewayError::Server(io::Error::other(e)))??;

    let (stop_tx, stop_rx) = oneshot::channel::<()>();
    let app = router(services.clone());
    let server = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = stop_rx.await;
            })
            .await
    });

    let snapshotter = {
        let services = services.clone();
        let period = services.config.snapshot_interval;
        tokio::spawn(async move {
            let mut ticker = tokio::time::interval(period);
            ticker.tick().await;
            loop {
                ticker.tick().await;
                let s = services.clone();
                match tokio::task::spawn_blocking(move || s.snapshot_if_dirty()).await {
                    Ok(Err(e)) => tracing::error!(error = %e, "periodic snapshot failed"),
                    Err(e) => tracing::error!(error = %e, "snapshot task failed"),
                    Ok(Ok(_)) => {}
                }
            }
        })
    };

    tracing::info!(%addr, "listening");
    Ok(ServerHandle {
        addr,
        services,
        stop: Some(stop_tx),
        server,
        snapshotter,
    })
}

/// Loads a places CSV into `<data_dir>/pois.csv`, replacing the previous
/// set, and reports what was accepted.
pub fn seed_pois(config: &ServiceConfig, csv: &Path) -> Result<IngestReport, GatewayError> {
    let directory = PoiDirectory::new(config.grid_cell_deg)?;
    let report = directory.ingest_file(csv)?;
    std::fs::create_dir_all(&config.data_dir).map_err(data_dir_error(&config.data_dir))?;
    let target = config.pois_file();
    let tmp = target.with_extension("csv.tmp");
    let file = std::fs::File::create(&tmp).map_err(data_dir_error(&tmp))?;
    crate::geo::write_csv(io::BufWriter::new(file), directory.index().pois())?;
    std::fs::rename(&tmp, &target).map_err(data_dir_error(&target))?;
    Ok(report)
}
