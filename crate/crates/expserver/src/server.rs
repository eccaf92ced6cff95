//! WebSocket endpoint: `GET /ws/{session}` upgrades to a session socket.
//!
//! One task per connection runs the session loop on a monotonic ticker;
//! keypresses are queued as they arrive and applied at the next tick. A
//! session name admits one operator at a time.

use std::collections::HashSet;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use tokio::time::MissedTickBehavior;

use crate::session::{Session, SessionConfig};
use crate::wire::{ControlAction, WireMessage};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub listen: SocketAddr,
    /// Simulation slots per wall-clock second (1 / T_s for real time).
    pub tick_rate_hz: f64,
    pub scenario: PathBuf,
    /// Session logs are written here as `<session>.ndjson`.
    pub log_dir: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("tick rate must be positive and finite, got {0}")]
    TickRate(f64),
    #[error(transparent)]
    Config(#[from] whmc::error::ConfigError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug)]
pub struct AppState {
    pub session: Arc<SessionConfig>,
    pub tick: Duration,
    pub log_dir: PathBuf,
    active: Mutex<HashSet<String>>,
}

impl AppState {
    pub fn new(session: SessionConfig, tick_rate_hz: f64, log_dir: PathBuf) -> Result<Self, ServerError> {
        if !(tick_rate_hz.is_finite() && tick_rate_hz > 0.0) {
            return Err(ServerError::TickRate(tick_rate_hz));
        }
        Ok(Self {
            session: Arc::new(session),
            tick: Duration::from_secs_f64(1.0 / tick_rate_hz),
            log_dir,
            active: Mutex::new(HashSet::new()),
        })
    }

    fn claim(self: &Arc<Self>, id: &str) -> Option<Claim> {
        let mut active = self.active.lock().expect("lock");
        active.insert(id.to_string()).then(|| Claim {
            state: self.clone(),
            id: id.to_string(),
        })
    }
}

/// Holds a session name while its operator is connected.
struct Claim {
    state: Arc<AppState>,
    id: String,
}

impl Drop for Claim {
    fn drop(&mut self) {
        self.state.active.lock().expect("lock").remove(&self.id);
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/ws/:session", get(ws_handler))
        .route("/health", get(|| async { "ok" }))
        .with_state(state)
}

async fn ws_handler(
    Path(id): Path<String>,
    State(state): State<Arc<AppState>>,
    ws: WebSocketUpgrade,
) -> Response {
    if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        return (StatusCode::BAD_REQUEST, "session names use [A-Za-z0-9_-]").into_response();
    }
    let Some(claim) = state.claim(&id) else {
        return (StatusCode::CONFLICT, "session already has an operator").into_response();
    };
    ws.on_upgrade(move |socket| async move {
        run_session(socket, &claim).await;
        drop(claim);
    })
}

async fn send(socket: &mut futures::stream::SplitSink<WebSocket, Message>, msg: &WireMessage) -> bool {
    socket.send(Message::Text(msg.encode())).await.is_ok()
}

async fn run_session(socket: WebSocket, claim: &Claim) {
    let state = &claim.state;
    let (mut tx, mut rx) = socket.split();
    let mut session = match Session::new(&claim.id, state.session.clone()) {
        Ok(s) => s,
        Err(e) => {
            let _ = send(&mut tx, &WireMessage::Error { message: e.to_string() }).await;
            return;
        }
    };
    log::info!("session {} connected", claim.id);
    let mut ticker = tokio::time::interval(state.tick);
    // Slots stay on the schedule fixed at start: late ticks are caught up
    // rather than shifting every later tick.
    ticker.set_missed_tick_behavior(MissedTickBehavior::Burst);
    let ended = loop {
        tokio::select! {
            _ = ticker.tick() => match session.tick() {
                Ok(Some(msg)) => {
                    if !send(&mut tx, &msg).await {
                        break false;
                    }
                }
                Ok(None) => {}
                Err(e) => {
                    let _ = send(&mut tx, &WireMessage::Error { message: e.to_string() }).await;
                    break false;
                }
            },
            incoming = rx.next() => {
                let text = match incoming {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break false,
                    Some(Ok(_)) => continue,
                };
                let reply = match WireMessage::decode(&text) {
                    Ok(WireMessage::KeyPress { client_time, key }) => session.key_press(&key, client_time).err().map(|e| e.to_string()),
                    Ok(WireMessage::SessionControl { action: ControlAction::End }) => break true,
                    Ok(WireMessage::SessionControl { action }) => session.control(action).err().map(|e| e.to_string()),
                    Ok(other) => Some(format!("unexpected message from operator: {other:?}")),
                    Err(e) => Some(e.to_string()),
                };
                if let Some(message) = reply {
                    if !send(&mut tx, &WireMessage::Error { message }).await {
                        break false;
                    }
                }
            }
        }
    };

    let mut finalized = session.finalize();
    let path = state.log_dir.join(format!("{}.ndjson", claim.id));
    let written = whmc::commands::write_atomic(&path, |w| finalized.log.write(w));
    match &written {
        Ok(()) => log::info!("session {} log written to {}", claim.id, path.display()),
        Err(e) => log::error!("session {}: cannot write log: {e}", claim.id),
    }
    if ended {
        if let WireMessage::VerdictReport { log_path, warnings, .. } = &mut finalized.verdict {
            match written {
                Ok(()) => *log_path = Some(path.display().to_string()),
                Err(e) => warnings.push(format!("log not written: {e}")),
            }
        }
        let _ = send(&mut tx, &finalized.verdict).await;
        let _ = tx.send(Message::Close(None)).await;
    }
}

/// Loads the scenario and serves until the process is stopped.
pub async fn serve(cfg: ServerConfig) -> Result<(), ServerError> {
    let resolved = whmc::config::load(&cfg.scenario, &Default::default())?;
    let state = Arc::new(AppState::new(
        SessionConfig::from_resolved(&resolved),
        cfg.tick_rate_hz,
        cfg.log_dir.clone(),
    )?);
    std::fs::create_dir_all(&cfg.log_dir)?;
    let listener = tokio::net::TcpListener::bind(cfg.listen).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test(start_paused = true)]
    async fn ticker_does_not_drift() {
        // 10^4 ticks at 20 Hz land exactly on schedule under virtual time,
        // including after a stall longer than a tick.
        let period = Duration::from_millis(50);
        let mut ticker = tokio::time::interval(period);
        ticker.set_missed_tick_behavior(MissedTickBehavior::Burst);
        let start = tokio::time::Instant::now();
        let mut last = start;
        for i in 0..10_000u32 {
            last = ticker.tick().await;
            if i == 5000 {
                tokio::time::advance(Duration::from_millis(180)).await;
            }
        }
        assert_eq!(last - start, period * 9_999);
    }
}
