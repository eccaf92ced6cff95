use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::{self, Message};
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};
use whmc::config::ScenarioConfig;
use whmc::sessionlog::SessionLog;
use whmc_expserver::session::verdict_from_log;
use whmc_expserver::{router, AppState, ControlAction, SessionConfig, WireMessage};

type Socket = WebSocketStream<MaybeTlsStream<TcpStream>>;

async fn start(log_dir: &Path) -> (SocketAddr, Arc<AppState>) {
    let mut cfg = ScenarioConfig::reference();
    cfg.analysis.mc_samples = 20_000;
    cfg.plant.reappear_prob = 1.0;
    let resolved = cfg.resolve(Path::new(".")).unwrap();
    let state = Arc::new(AppState::new(SessionConfig::from_resolved(&resolved), 1000.0, log_dir.to_path_buf()).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = router(state.clone());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (addr, state)
}

async fn connect(addr: SocketAddr, id: &str) -> Result<Socket, tungstenite::Error> {
    tokio_tungstenite::connect_async(format!("ws://{addr}/ws/{id}")).await.map(|(s, _)| s)
}

async fn send(ws: &mut Socket, msg: &WireMessage) {
    ws.send(Message::Text(msg.encode())).await.unwrap();
}

async fn recv(ws: &mut Socket) -> WireMessage {
    loop {
        let frame = tokio::time::timeout(Duration::from_secs(20), ws.next())
            .await
            .expect("server went quiet")
            .expect("socket closed")
            .unwrap();
        if let Message::Text(t) = frame {
            return WireMessage::decode(&t).unwrap();
        }
    }
}

/// Presses `lags[i % len]` ticks after the weight shows, for `presses`
/// presses. The client cannot see when a window opens, so some presses land
/// before one and are logged as spurious.
async fn operate(ws: &mut Socket, lags: &[u64], total: usize) {
    let mut waited: Option<u64> = None;
    let mut presses = 0;
    while presses < total {
        if let WireMessage::StateTick { m_c_visible, .. } = recv(ws).await {
            if m_c_visible > 0.0 {
                let w = waited.get_or_insert(0);
                if *w == lags[presses % lags.len()] {
                    send(ws, &WireMessage::KeyPress { client_time: 0.0, key: "s".into() }).await;
                    presses += 1;
                    waited = None;
                    continue;
                }
                *w += 1;
            } else {
                waited = None;
            }
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn session_runs_to_a_verdict_and_writes_a_replayable_log() {
    let dir = tempfile::tempdir().unwrap();
    let (addr, state) = start(dir.path()).await;
    let mut ws = connect(addr, "alice").await.unwrap();

    // One operator per session name.
    match connect(addr, "alice").await {
        Err(tungstenite::Error::Http(resp)) => assert_eq!(resp.status(), 409),
        other => panic!("second operator admitted: {:?}", other.map(|_| ())),
    }

    send(&mut ws, &WireMessage::SessionControl { action: ControlAction::Start }).await;
    // Unknown fields are rejected with an error frame; the session goes on.
    ws.send(Message::Text(r#"{"version":1,"type":"key_press","client_time":0,"key":"s","extra":1}"#.into()))
        .await
        .unwrap();
    let mut saw_error = false;
    for _ in 0..50 {
        if let WireMessage::Error { .. } = recv(&mut ws).await {
            saw_error = true;
            break;
        }
    }
    assert!(saw_error);

    operate(&mut ws, &[3, 3, 7, 7, 7], 300).await;
    send(&mut ws, &WireMessage::SessionControl { action: ControlAction::End }).await;
    let verdict = loop {
        if let m @ WireMessage::VerdictReport { .. } = recv(&mut ws).await {
            break m;
        }
    };
    let WireMessage::VerdictReport { lag_states, log_path, .. } = &verdict else { unreachable!() };
    assert!(!lag_states.is_empty(), "{verdict:?}");
    let path = log_path.as_ref().expect("log written");
    let log = SessionLog::read(std::io::BufReader::new(std::fs::File::open(path).unwrap())).unwrap();
    assert!(log.lags_s().len() >= 30, "{} lags", log.lags_s().len());
    // Presses still queued when `end` arrives never reach a slot.
    let handled = log.lags_s().len() + log.spurious_count();
    assert!((290..=300).contains(&handled), "{handled} presses handled");

    // The log alone reproduces the verdict.
    let (_, replay) = verdict_from_log("alice", &log, &state.session);
    let mut expected = verdict.clone();
    if let WireMessage::VerdictReport { log_path, .. } = &mut expected {
        *log_path = None;
    }
    assert_eq!(replay, expected);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn disconnect_still_writes_the_log_and_frees_the_name() {
    let dir = tempfile::tempdir().unwrap();
    let (addr, _) = start(dir.path()).await;
    let mut ws = connect(addr, "bob").await.unwrap();
    send(&mut ws, &WireMessage::SessionControl { action: ControlAction::Start }).await;
    for _ in 0..20 {
        recv(&mut ws).await;
    }
    drop(ws);
    let path = dir.path().join("bob.ndjson");
    for _ in 0..100 {
        if path.exists() {
            break;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    assert!(path.exists());
    // The name is free again once the log is written.
    let mut again = None;
    for _ in 0..100 {
        if let Ok(ws) = connect(addr, "bob").await {
            again = Some(ws);
            break;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    assert!(again.is_some());
}

#[tokio::test]
async fn bad_session_names_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let (addr, _) = start(dir.path()).await;
    match connect(addr, "a%20b").await {
        Err(tungstenite::Error::Http(resp)) => assert_eq!(resp.status(), 400),
        other => panic!("accepted: {:?}", other.map(|_| ())),
    }
}
