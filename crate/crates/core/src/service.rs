//! Live mode: the engine paced to wall-clock time behind a WebSocket.
//!
//! Wire schema `fungisync-wire/1`, one JSON object per text frame:
//!
//! - inbound `{"type":"cmd","op":"grab_mask","id":3}` (any [`ClientCommand`])
//! - outbound `{"type":"state",...}` ([`StateBroadcast`]) at most 10 times
//!   per second, and `{"type":"err","code":...,"message":...}` replies
//!
//! `GET /health` answers with the current tick.
//!
//! One task owns the engine. Connection handlers talk to it only through
//! the inbound command queue and the outbound broadcast channel.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use glam::DVec3;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{broadcast, mpsc, oneshot, watch};
use tokio::task::JoinHandle;
use tokio::time::MissedTickBehavior;
use tracing::{debug, info, warn};

use crate::dynamics::{vividness, DEFAULT_VIVIDNESS_GAIN};
use crate::model::{AgentId, ElementKind, Tick};
use crate::netsync::LinkConfig;
use crate::sim::{ClientCommand, CommandError, Engine, ErrorCode, EventLog, Scenario, ScenarioError};

pub const WIRE_SCHEMA: &str = "fungisync-wire/1";

/// Upper bound on the broadcast rate, Hz.
pub const MAX_BROADCAST_HZ: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceView {
    pub kind: ElementKind,
    pub intensity: f64,
    pub spread: f64,
    pub origin: AgentId,
    pub native: bool,
    pub vividness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentView {
    pub id: AgentId,
    pub position: DVec3,
    pub facing: DVec3,
    pub hand: DVec3,
    pub mask: bool,
    /// Native kind while masked.
    pub kind: Option<ElementKind>,
    pub traces: Vec<TraceView>,
}

/// One replica's non-idle session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    /// `[local, peer]`
    pub pair: [AgentId; 2],
    pub state: String,
    /// Geometry factor of the local agent as receiver.
    pub g: f64,
}

/// Full engine snapshot after the stated tick has executed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBroadcast {
    pub schema: String,
    pub tick: Tick,
    pub agents: Vec<AgentView>,
    pub sessions: Vec<SessionView>,
    pub audio: f64,
}

impl StateBroadcast {
    /// Snapshot of `engine` after its most recent step.
    pub fn capture(engine: &Engine) -> Self {
        let env = engine.audio();
        let agents = engine
            .agents()
            .map(|a| AgentView {
                id: a.id,
                position: a.position,
                facing: a.facing,
                hand: a.hand_position,
                mask: a.is_masked(),
                kind: a.umwelt.as_ref().map(|u| u.native_kind()),
                traces: a
                    .umwelt
                    .iter()
                    .flat_map(|u| u.traces())
                    .map(|t| TraceView {
                        kind: t.kind,
                        intensity: t.intensity,
                        spread: t.spread,
                        origin: t.origin,
                        native: t.native,
                        vividness: vividness(t.intensity, env, DEFAULT_VIVIDNESS_GAIN),
                    })
                    .collect(),
            })
            .collect();
        let sessions = engine
            .agents()
            .flat_map(|a| engine.sessions(a.id))
            .filter(|s| s.state.label() != "idle")
            .map(|s| SessionView {
                pair: [s.local, s.peer],
                state: s.state.label().to_string(),
                g: s.local_g(),
            })
            .collect();
        Self {
            schema: WIRE_SCHEMA.to_string(),
            tick: engine.tick().saturating_sub(1),
            agents,
            sessions,
            audio: env.level,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReply {
    pub code: ErrorCode,
    pub message: String,
}

impl From<CommandError> for ErrorReply {
    fn from(e: CommandError) -> Self {
        Self {
            code: e.code,
            message: e.message,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Outbound {
    State(StateBroadcast),
    Err(ErrorReply),
}

/// Parses one inbound frame: a `{"type":"cmd", "op": ...}` object.
pub fn parse_inbound(text: &str) -> Result<ClientCommand, ErrorReply> {
    let bad = |message: String| ErrorReply {
        code: ErrorCode::BadPayload,
        message,
    };
    let mut value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| bad(format!("malformed JSON: {e}")))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| bad("expected a JSON object".into()))?;
    match obj.remove("type") {
        Some(serde_json::Value::String(t)) if t == "cmd" => {}
        other => return Err(bad(format!("expected \"type\":\"cmd\", got {other:?}"))),
    }
    serde_json::from_value(value).map_err(|e| bad(format!("bad command: {e}")))
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("engine task failed: {0}")]
    Join(#[from] tokio::task::JoinError),
}

/// What a live run leaves behind.
#[derive(Debug, Clone)]
pub struct Recording {
    pub log: EventLog,
    /// Reproduces `log` when run through the batch engine.
    pub replay: Scenario,
}

struct Queued {
    client: u64,
    command: ClientCommand,
    reply: mpsc::UnboundedSender<Outbound>,
}

#[derive(Clone)]
struct Shared {
    commands: mpsc::UnboundedSender<Queued>,
    states: broadcast::Sender<Arc<str>>,
    tick: watch::Receiver<Tick>,
    next_client: Arc<std::sync::atomic::AtomicU64>,
}

/// A running service. Dropping it leaves the tasks running; call
/// [`ServiceHandle::stop`] to end the run and collect the recording.
pub struct ServiceHandle {
    addr: SocketAddr,
    stop: oneshot::Sender<()>,
    engine: JoinHandle<Recording>,
    server: JoinHandle<()>,
}

impl ServiceHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub async fn stop(self) -> Result<Recording, ServiceError> {
        let _ = self.stop.send(());
        let recording = self.engine.await?;
        self.server.abort();
        Ok(recording)
    }
}

/// The live variant of `base`: internal links are ideal.
pub fn live_scenario(base: &Scenario) -> Scenario {
    let mut s = base.clone();
    s.link = LinkConfig::ideal();
    s
}

/// Binds `addr` and starts the engine loop and the HTTP server.
pub async fn start(base: &Scenario, addr: SocketAddr) -> Result<ServiceHandle, ServiceError> {
    let scenario = live_scenario(base);
    let engine = Engine::new(&scenario)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;

    let (cmd_tx, cmd_rx) = mpsc::unbounded_channel();
    let (state_tx, _) = broadcast::channel(16);
    let (tick_tx, tick_rx) = watch::channel(0);
    let (stop_tx, stop_rx) = oneshot::channel();

    let engine = tokio::spawn(engine_loop(
        engine,
        scenario,
        cmd_rx,
        state_tx.clone(),
        tick_tx,
        stop_rx,
    ));

    let shared = Shared {
        commands: cmd_tx,
        states: state_tx,
        tick: tick_rx,
        next_client: Arc::new(std::sync::atomic::AtomicU64::new(1)),
    };
    let app = Router::new()
        .route("/ws", get(ws_upgrade))
        .route("/health", get(health))
        .with_state(shared);
    let server = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            warn!(error = %e, "server stopped");
        }
    });
    info!(%addr, schema = WIRE_SCHEMA, "service listening");
    Ok(ServiceHandle {
        addr,
        stop: stop_tx,
        engine,
        server,
    })
}

/// Runs until ctrl-c, then returns the recording.
pub async fn serve(base: &Scenario, port: u16) -> Result<Recording, ServiceError> {
    let handle = start(base, SocketAddr::from(([0, 0, 0, 0], port))).await?;
    tokio::signal::ctrl_c().await?;
    info!("interrupted, stopping");
    handle.stop().await
}

fn broadcast_every(dt: f64) -> Tick {
    ((1.0 / MAX_BROADCAST_HZ) / dt - 1e-9).ceil().max(1.0) as Tick
}

async fn engine_loop(
    mut engine: Engine,
    scenario: Scenario,
    mut commands: mpsc::UnboundedReceiver<Queued>,
    states: broadcast::Sender<Arc<str>>,
    tick: watch::Sender<Tick>,
    mut stop: oneshot::Receiver<()>,
) -> Recording {
    // Delay keeps consecutive ticks at least dt apart, which bounds the
    // broadcast rate even when the loop falls behind.
    let mut interval = tokio::time::interval(Duration::from_secs_f64(engine.dt()));
    interval.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let every = broadcast_every(engine.dt());
    loop {
        tokio::select! {
            biased;
            _ = &mut stop => break,
            _ = interval.tick() => {}
        }
        let mut batch = Vec::new();
        while let Ok(q) = commands.try_recv() {
            batch.push(q);
        }
        let live: Vec<(u64, ClientCommand)> =
            batch.iter().map(|q| (q.client, q.command.clone())).collect();
        let outcomes = engine.step(&live);
        for (q, (_, outcome)) in batch.iter().zip(outcomes) {
            if let Err(e) = outcome {
                debug!(client = q.client, error = %e, "command rejected");
                let _ = q.reply.send(Outbound::Err(e.into()));
            }
        }
        let executed = engine.tick() - 1;
        tick.send_replace(executed);
        if executed.is_multiple_of(every) && states.receiver_count() > 0 {
            let msg = Outbound::State(StateBroadcast::capture(&engine));
            let text: Arc<str> = serde_json::to_string(&msg).expect("state serializes").into();
            let _ = states.send(text);
        }
    }
    if engine.tick() == 0 {
        engine.step(&[]);
    }
    let replay = engine.replay_scenario(&scenario);
    Recording {
        log: engine.finish(),
        replay,
    }
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    schema: &'static str,
    tick: Tick,
}

async fn health(State(shared): State<Shared>) -> Json<Health> {
    Json(Health {
        status: "ok",
        schema: WIRE_SCHEMA,
        tick: *shared.tick.borrow(),
    })
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(shared): State<Shared>) -> impl IntoResponse {
    let client = shared
        .next_client
        .fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    ws.on_upgrade(move |socket| connection(socket, client, shared))
}

async fn connection(socket: WebSocket, client: u64, shared: Shared) {
    debug!(client, "client connected");
    let (mut sink, mut stream) = socket.split();
    let (reply_tx, mut reply_rx) = mpsc::unbounded_channel::<Outbound>();
    let mut states = shared.states.subscribe();

    let writer = tokio::spawn(async move {
        loop {
            let text: Arc<str> = tokio::select! {
                r = reply_rx.recv() => match r {
                    Some(msg) => serde_json::to_string(&msg).expect("reply serializes").into(),
                    None => break,
                },
                s = states.recv() => match s {
                    Ok(text) => text,
                    // a slow client just misses snapshots
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => break,
                },
            };
            if sink.send(Message::Text(text.as_ref().into())).await.is_err() {
                break;
            }
        }
    });

    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            Message::Text(t) => t.to_string(),
            Message::Binary(b) => String::from_utf8_lossy(&b).into_owned(),
            Message::Close(_) => break,
            _ => continue,
        };
        match parse_inbound(&text) {
            Ok(command) => {
                let queued = Queued {
                    client,
                    command,
                    reply: reply_tx.clone(),
                };
                if shared.commands.send(queued).is_err() {
                    break;
                }
            }
            Err(reply) => {
                let _ = reply_tx.send(Outbound::Err(reply));
            }
        }
    }
    drop(reply_tx);
    writer.abort();
    debug!(client, "client disconnected");
}
