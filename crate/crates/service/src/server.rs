use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::serve::ListenerExt;
use axum::{Json, Router};
use consensus_lab::config::LabConfig;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::time::MissedTickBehavior;

use crate::session::SessionCore;
use crate::wire::{ErrorCode, ServerMessage};

pub const PORT_VAR: &str = "CONSENSUS_LAB_PORT";
pub const DATA_DIR_VAR: &str = "CONSENSUS_LAB_DATA_DIR";
pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub lab: LabConfig,
    pub data_dir: PathBuf,
    pub max_sessions: usize,
}

impl ServerConfig {
    pub fn new(lab: LabConfig, data_dir: PathBuf) -> Self {
        Self {
            lab,
            data_dir,
            max_sessions: 16,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("{PORT_VAR} must be a port number, got {0:?}")]
    Port(String),
}

/// Port and data directory from the environment, with defaults.
pub fn env_settings() -> Result<(u16, PathBuf), EnvError> {
    let port = match std::env::var(PORT_VAR) {
        Ok(v) => v.parse().map_err(|_| EnvError::Port(v))?,
        Err(_) => DEFAULT_PORT,
    };
    let dir = std::env::var_os(DATA_DIR_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("sessions"));
    Ok((port, dir))
}

#[derive(Clone)]
struct AppState {
    cfg: Arc<ServerConfig>,
    active: Arc<AtomicUsize>,
    next_id: Arc<AtomicU64>,
    shutdown: watch::Receiver<bool>,
}

/// Releases a session slot when the socket task ends.
struct Slot(Arc<AtomicUsize>);

impl Drop for Slot {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

impl AppState {
    fn claim(&self) -> Option<Slot> {
        let max = self.cfg.max_sessions;
        self.active
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| (n < max).then_some(n + 1))
            .ok()
            .map(|_| Slot(self.active.clone()))
    }
}

fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/session", get(session))
        .with_state(state)
}

async fn healthz(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(serde_json::json!({
        "status": "ok",
        "name": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "active_sessions": state.active.load(Ordering::SeqCst),
    }))
}

async fn session(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    let slot = state.claim();
    ws.on_upgrade(move |socket| async move {
        match slot {
            Some(slot) => run_socket(socket, state, slot).await,
            None => refuse(socket).await,
        }
    })
    .into_response()
}

async fn send(socket: &mut WebSocket, m: &ServerMessage) -> bool {
    socket.send(Message::Text(m.to_line().into())).await.is_ok()
}

async fn refuse(mut socket: WebSocket) {
    let _ = send(&mut socket, &ServerMessage::error(ErrorCode::Busy, "session capacity reached")).await;
    let _ = socket.send(Message::Close(None)).await;
}

async fn run_socket(mut socket: WebSocket, state: AppState, _slot: Slot) {
    let id = state.next_id.fetch_add(1, Ordering::SeqCst);
    let mut core = match SessionCore::new(id, state.cfg.lab.clone(), Some(state.cfg.data_dir.clone())) {
        Ok(c) => c,
        Err(e) => {
            let _ = send(&mut socket, &ServerMessage::error(ErrorCode::Internal, e.to_string())).await;
            return;
        }
    };
    tracing::info!(session = id, "session opened");
    let mut shutdown = state.shutdown.clone();
    let mut ticker = tokio::time::interval(Duration::from_secs_f64(core.dt()));
    ticker.set_missed_tick_behavior(MissedTickBehavior::Skip);
    'session: loop {
        let live = core.is_live();
        let out = tokio::select! {
            m = socket.recv() => match m {
                Some(Ok(Message::Text(t))) => core.handle_line(t.as_str()),
                Some(Ok(Message::Binary(_))) => vec![ServerMessage::error(ErrorCode::Parse, "binary frames are not accepted")],
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => {
                    core.abort();
                    break 'session;
                }
                Some(Ok(_)) => continue,
            },
            _ = ticker.tick(), if live => core.step(),
            _ = shutdown.changed() => {
                let out = core.abort();
                for m in &out {
                    let _ = send(&mut socket, m).await;
                }
                break 'session;
            }
        };
        for m in &out {
            if !send(&mut socket, m).await {
                core.abort();
                break 'session;
            }
        }
        if core.is_done() {
            break;
        }
    }
    tracing::info!(session = id, persisted = core.is_persisted(), "session closed");
    let _ = socket.send(Message::Close(None)).await;
}

/// Serves `/session` and `/healthz` on `listener` until `shutdown` resolves.
/// Open sessions are then aborted and their partial logs written before the
/// call returns.
pub async fn serve<F>(listener: TcpListener, cfg: ServerConfig, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    std::fs::create_dir_all(&cfg.data_dir)?;
    let (tx, rx) = watch::channel(false);
    let state = AppState {
        cfg: Arc::new(cfg),
        active: Arc::new(AtomicUsize::new(0)),
        next_id: Arc::new(AtomicU64::new(1)),
        shutdown: rx.clone(),
    };
    let active = state.active.clone();
    tokio::spawn(async move {
        shutdown.await;
        let _ = tx.send(true);
    });
    let mut drain = rx;
    let listener = listener.tap_io(|tcp| {
        let _ = tcp.set_nodelay(true);
    });
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async move {
            let _ = drain.wait_for(|&stop| stop).await;
        })
        .await?;
    // socket tasks flush their logs as they see the signal
    while active.load(Ordering::SeqCst) > 0 {
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    Ok(())
}

pub async fn bind(port: u16) -> std::io::Result<(TcpListener, SocketAddr)> {
    let listener = TcpListener::bind(("0.0.0.0", port)).await?;
    let addr = listener.local_addr()?;
    Ok((listener, addr))
}
