//! The live room: listeners, the tick loop and the HTTP surface.
//!
//! Ingest connections decode lines and push events into a bounded queue. A single
//! tick loop drains that queue into the [`Sequencer`], runs the tick on the wall clock
//! and hands a serialized [`ClientUpdate`] to the [`Fanout`]. Nothing the tick loop
//! does waits on a network peer.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use anyhow::{Context, Result};
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::Serialize;
use tokio::io::AsyncWriteExt;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio::task::JoinHandle;
use tokio::time::{Instant, MissedTickBehavior};
use tokio_util::codec::{FramedRead, LinesCodec, LinesCodecError};

use arsls_core::compositor::{build_render_list, RenderList};
use arsls_core::effects::EffectRecord;
use arsls_core::protocol::{decode_event, RoomEvent};
use arsls_core::replay::ReplayReport;
use arsls_core::scene::SceneConfig;
use arsls_core::session::Session;
use arsls_core::verse::BoardView;

use crate::config::{Inputs, ServerConfig};
use crate::fanout::{Fanout, Update};
use crate::sequencer::Sequencer;

/// Longest accepted ingest line; longer lines get an error reply and are skipped.
pub const MAX_LINE_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, Serialize)]
pub struct ClientUpdate<'a> {
    pub tick: u64,
    pub render_list: &'a RenderList,
    pub board: Option<&'a BoardView>,
    /// Effects addressed to a user (acks, rejections, judgments) since the last update.
    pub notices: &'a [EffectRecord],
}

#[derive(Debug, Default)]
pub struct Stats {
    pub tick: AtomicU64,
    pub finished: AtomicBool,
    pub events_received: AtomicU64,
    pub events_applied: AtomicU64,
    pub late_events: AtomicU64,
    pub ignored_events: AtomicU64,
    pub decode_errors: AtomicU64,
    pub ingest_dropped: AtomicU64,
    pub ingest_connections: AtomicU64,
    pub rejections: AtomicU64,
    pub max_tick_lag_us: AtomicU64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct StatsSnapshot {
    pub tick: u64,
    pub finished: bool,
    pub events_received: u64,
    pub events_applied: u64,
    pub late_events: u64,
    pub ignored_events: u64,
    pub decode_errors: u64,
    pub ingest_dropped: u64,
    pub ingest_connections: u64,
    pub rejections: u64,
    pub clients: u64,
    pub clients_dropped: u64,
    pub updates_sent: u64,
    pub max_tick_lag_us: u64,
}

pub struct Shared {
    pub stats: Stats,
    pub fanout: Fanout,
    board: Mutex<Option<BoardView>>,
    scene: Arc<SceneConfig>,
    ingest: mpsc::Sender<RoomEvent>,
}

impl Shared {
    pub fn snapshot(&self) -> StatsSnapshot {
        let s = &self.stats;
        let get = |a: &AtomicU64| a.load(Ordering::Relaxed);
        StatsSnapshot {
            tick: get(&s.tick),
            finished: s.finished.load(Ordering::Relaxed),
            events_received: get(&s.events_received),
            events_applied: get(&s.events_applied),
            late_events: get(&s.late_events),
            ignored_events: get(&s.ignored_events),
            decode_errors: get(&s.decode_errors),
            ingest_dropped: get(&s.ingest_dropped),
            ingest_connections: get(&s.ingest_connections),
            rejections: get(&s.rejections),
            clients: self.fanout.len() as u64,
            clients_dropped: get(&self.fanout.dropped),
            updates_sent: get(&self.fanout.sent),
            max_tick_lag_us: get(&s.max_tick_lag_us),
        }
    }

    /// Decodes and queues one ingest line, returning the JSON reply.
    pub fn ingest_line(&self, line: &str) -> String {
        let event = match decode_event(line.as_bytes()) {
            Ok(e) => e,
            Err(e) => {
                self.stats.decode_errors.fetch_add(1, Ordering::Relaxed);
                return reply_err(&e.to_string());
            }
        };
        let ts = event.ts_ms;
        match self.ingest.try_send(event) {
            Ok(()) => {
                self.stats.events_received.fetch_add(1, Ordering::Relaxed);
                serde_json::json!({"ok": true, "ts_ms": ts}).to_string()
            }
            Err(mpsc::error::TrySendError::Full(_)) => {
                self.stats.ingest_dropped.fetch_add(1, Ordering::Relaxed);
                reply_err("overloaded")
            }
            Err(mpsc::error::TrySendError::Closed(_)) => reply_err("session ended"),
        }
    }
}

fn reply_err(msg: &str) -> String {
    serde_json::json!({"ok": false, "error": msg}).to_string()
}

/// A running room. Dropping it does not stop the listeners; call [`Room::shutdown`].
pub struct Room {
    pub http_addr: SocketAddr,
    pub ingest_addr: SocketAddr,
    pub shared: Arc<Shared>,
    session: JoinHandle<Result<ReplayReport>>,
    listeners: Vec<JoinHandle<()>>,
}

impl Room {
    /// Binds both listeners, opens the recording and starts the session clock. Any
    /// startup failure is returned before a single client is accepted.
    pub async fn start(cfg: &ServerConfig, inputs: Inputs) -> Result<Self> {
        let session = Session::new(inputs.plan.clone(), Arc::clone(&inputs.scene), Arc::clone(&inputs.corpus))
            .context("session plan")?;
        let http = TcpListener::bind(&cfg.http_addr).await.with_context(|| format!("binding {}", cfg.http_addr))?;
        let ingest = TcpListener::bind(&cfg.ingest_addr).await.with_context(|| format!("binding {}", cfg.ingest_addr))?;
        let mut sequencer = Sequencer::new(session);
        if let Some(path) = &cfg.record {
            let file = std::fs::OpenOptions::new()
                .write(true)
                .create_new(true)
                .open(path)
                .with_context(|| format!("creating recording {} (refusing to overwrite)", path.display()))?;
            sequencer = sequencer.with_recorder(Box::new(std::io::BufWriter::new(file)));
        }

        let (tx, rx) = mpsc::channel(cfg.ingest_queue.max(1));
        let shared = Arc::new(Shared {
            stats: Stats::default(),
            fanout: Fanout::new(cfg.client_buffer),
            board: Mutex::new(None),
            scene: Arc::clone(&inputs.scene),
            ingest: tx,
        });
        let http_addr = http.local_addr()?;
        let ingest_addr = ingest.local_addr()?;

        let app = Router::new()
            .route("/scene", get(get_scene))
            .route("/board", get(get_board))
            .route("/health", get(get_health))
            .route("/stats", get(get_stats))
            .route("/ws", get(ws_viewer))
            .route("/ingest", get(ws_ingest))
            .with_state(Arc::clone(&shared));
        let http_task = tokio::spawn(async move {
            if let Err(e) = axum::serve(http, app).await {
                tracing::error!("http server: {e}");
            }
        });
        let ingest_task = tokio::spawn(accept_ingest(ingest, Arc::clone(&shared)));

        let hz = inputs.scene.tuning.tick_hz;
        let fanout_every = u64::from((hz / cfg.fanout_hz.unwrap_or(hz).clamp(1, hz)).max(1));
        let report_path = cfg.report_path();
        let session = tokio::spawn(tick_loop(sequencer, rx, Arc::clone(&shared), hz, fanout_every, report_path));
        tracing::info!(%http_addr, %ingest_addr, seed = inputs.plan.seed, "room open");
        Ok(Self { http_addr, ingest_addr, shared, session, listeners: vec![http_task, ingest_task] })
    }

    /// Waits for the session to end and returns its report.
    pub async fn wait(&mut self) -> Result<ReplayReport> {
        (&mut self.session).await.context("tick loop panicked")?
    }

    pub fn shutdown(self) {
        self.session.abort();
        for l in self.listeners {
            l.abort();
        }
    }
}

async fn tick_loop(
    mut seq: Sequencer,
    mut rx: mpsc::Receiver<RoomEvent>,
    shared: Arc<Shared>,
    hz: u32,
    fanout_every: u64,
    report_path: Option<PathBuf>,
) -> Result<ReplayReport> {
    let period = Duration::from_secs_f64(1.0 / f64::from(hz));
    let started = Instant::now();
    let mut interval = tokio::time::interval_at(started, period);
    interval.set_missed_tick_behavior(MissedTickBehavior::Burst);
    let mut notices: Vec<EffectRecord> = Vec::new();
    loop {
        interval.tick().await;
        let k = seq.session().tick();
        let due = started + period.mul_f64(k as f64);
        let lag = Instant::now().saturating_duration_since(due).as_micros() as u64;
        shared.stats.max_tick_lag_us.fetch_max(lag, Ordering::Relaxed);

        while let Ok(ev) = rx.try_recv() {
            seq.submit(ev);
        }
        let out = seq.step().context("writing the recording")?;
        let stats = &shared.stats;
        stats.events_applied.fetch_add(out.applied.len() as u64, Ordering::Relaxed);
        let session = seq.session();
        let counters = &session.sim().counters;
        stats.late_events.store(counters.late_events, Ordering::Relaxed);
        stats.rejections.store(counters.rejections, Ordering::Relaxed);
        stats.ignored_events.store(session.ignored_events(), Ordering::Relaxed);
        stats.tick.store(session.tick(), Ordering::Relaxed);
        notices.extend(out.records.into_iter().filter(|r| r.effect.user_id().is_some()));

        if session.tick().is_multiple_of(fanout_every) || out.finished {
            let sim = session.sim();
            let list = build_render_list(sim, &sim.cfg);
            let board = sim.verse.board_view(sim.now_ms());
            let update = ClientUpdate { tick: session.tick(), render_list: &list, board: board.as_ref(), notices: &notices };
            let json: Update = serde_json::to_string(&update)?.into();
            *shared.board.lock().unwrap() = board;
            shared.fanout.broadcast(&json);
            notices.clear();
        }
        if out.finished {
            shared.fanout.close_all();
            break;
        }
    }
    // Later ingest attempts see a closed queue.
    rx.close();
    let report = ReplayReport::from_session(seq.session(), started.elapsed().as_millis() as u64);
    shared.stats.finished.store(true, Ordering::Relaxed);
    if let Some(path) = report_path {
        std::fs::write(&path, serde_json::to_vec_pretty(&report)?).with_context(|| format!("writing {}", path.display()))?;
    }
    tracing::info!(digest = %report.digest, ticks = report.ticks, "session ended");
    Ok(report)
}

async fn accept_ingest(listener: TcpListener, shared: Arc<Shared>) {
    loop {
        match listener.accept().await {
            Ok((sock, peer)) => {
                tracing::debug!(%peer, "ingest connection");
                tokio::spawn(ingest_tcp(sock, Arc::clone(&shared)));
            }
            Err(e) => tracing::warn!("ingest accept: {e}"),
        }
    }
}

async fn ingest_tcp(sock: TcpStream, shared: Arc<Shared>) {
    shared.stats.ingest_connections.fetch_add(1, Ordering::Relaxed);
    let (r, mut w) = sock.into_split();
    let mut lines = FramedRead::new(r, LinesCodec::new_with_max_length(MAX_LINE_BYTES));
    while let Some(item) = lines.next().await {
        let reply = match item {
            Ok(line) if line.trim().is_empty() => continue,
            Ok(line) => shared.ingest_line(&line),
            Err(LinesCodecError::MaxLineLengthExceeded) => {
                shared.stats.decode_errors.fetch_add(1, Ordering::Relaxed);
                reply_err("line too long")
            }
            Err(LinesCodecError::Io(_)) => break,
        };
        if w.write_all(format!("{reply}\n").as_bytes()).await.is_err() {
            break;
        }
    }
}

async fn get_scene(State(shared): State<Arc<Shared>>) -> Json<SceneConfig> {
    Json(shared.scene.as_ref().clone())
}

async fn get_board(State(shared): State<Arc<Shared>>) -> Json<Option<BoardView>> {
    Json(shared.board.lock().unwrap().clone())
}

async fn get_health(State(shared): State<Arc<Shared>>) -> Json<serde_json::Value> {
    let s = &shared.stats;
    Json(serde_json::json!({
        "ok": true,
        "tick": s.tick.load(Ordering::Relaxed),
        "finished": s.finished.load(Ordering::Relaxed),
    }))
}

async fn get_stats(State(shared): State<Arc<Shared>>) -> Json<StatsSnapshot> {
    Json(shared.snapshot())
}

async fn ws_viewer(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> Response {
    ws.on_upgrade(move |socket| viewer(socket, shared))
}

async fn viewer(socket: WebSocket, shared: Arc<Shared>) {
    let (id, mut rx) = shared.fanout.subscribe();
    let (mut sink, mut stream) = socket.split();
    let writer = tokio::spawn(async move {
        while let Some(update) = rx.recv().await {
            if sink.send(Message::Text(update.as_ref().into())).await.is_err() {
                return;
            }
        }
        let _ = sink.send(Message::Close(None)).await;
    });
    shared.fanout.attach_writer(id, writer.abort_handle());
    let reader = async {
        while let Some(Ok(msg)) = stream.next().await {
            if matches!(msg, Message::Close(_)) {
                break;
            }
        }
    };
    // Either side ending (including the fan-out aborting a stalled writer) closes it.
    tokio::select! {
        _ = writer => {}
        _ = reader => {}
    }
    shared.fanout.unsubscribe(id);
}

async fn ws_ingest(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> impl IntoResponse {
    ws.max_message_size(MAX_LINE_BYTES).on_upgrade(move |socket| ingest_ws(socket, shared))
}

async fn ingest_ws(mut socket: WebSocket, shared: Arc<Shared>) {
    shared.stats.ingest_connections.fetch_add(1, Ordering::Relaxed);
    while let Some(Ok(msg)) = socket.recv().await {
        let text = match msg {
            Message::Text(t) => t.to_string(),
            Message::Binary(b) => String::from_utf8_lossy(&b).into_owned(),
            Message::Close(_) => break,
            _ => continue,
        };
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let reply = shared.ingest_line(line);
            if socket.send(Message::Text(reply.into())).await.is_err() {
                return;
            }
        }
    }
}
