//! Live performance server.
//!
//! A single engine thread owns the [`Session`] and advances it on the
//! project's column clock. Network handlers only send it commands and read
//! what it publishes: every index-stream subscriber gets its own unbounded
//! queue so no column is ever dropped, while the image stream watches the
//! latest column and skips whatever it cannot render in time.

use std::collections::HashMap;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::mpsc as std_mpsc;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use anyhow::Context;
use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use image::{ImageFormat, Rgba, RgbaImage};
use log::{debug, error, info, warn};
use loopstage_core::assets::cache::content_key;
use loopstage_core::compositor::{render_frame, Quality, RenderOrder};
use loopstage_core::performance::{encode_stream_column, Ack, ClientMessage, PerformanceRecording, Session};
use loopstage_core::prepare::PreparedProject;
use loopstage_core::synthesis::OutputTimeline;
use serde_json::json;
use tokio::sync::{mpsc, oneshot, watch};

/// One played column as published by the engine thread.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamColumn {
    pub column: u64,
    pub frames: Vec<usize>,
}

enum Command {
    Trigger {
        layer: usize,
        action: String,
        reply: oneshot::Sender<Ack>,
    },
    Param {
        name: String,
        value: serde_json::Value,
        reply: oneshot::Sender<Ack>,
    },
    Subscribe(mpsc::UnboundedSender<Arc<StreamColumn>>),
    Recording(oneshot::Sender<PerformanceRecording>),
    Shutdown,
}

/// Handle on the engine thread. Dropping it stops the thread.
pub struct SessionHandle {
    commands: std_mpsc::Sender<Command>,
    latest: watch::Receiver<Option<Arc<StreamColumn>>>,
    quality: watch::Receiver<Quality>,
    thread: Option<JoinHandle<()>>,
}

impl SessionHandle {
    /// Starts the clock. The session's first block must already exist.
    pub fn spawn(session: Session) -> Self {
        let (commands, rx) = std_mpsc::channel();
        let (latest_tx, latest) = watch::channel(None);
        let (quality_tx, quality) = watch::channel(session.quality());
        let thread = std::thread::Builder::new()
            .name("loopstage-engine".into())
            .spawn(move || run_engine(session, rx, latest_tx, quality_tx))
            .expect("engine thread starts");
        Self {
            commands,
            latest,
            quality,
            thread: Some(thread),
        }
    }

    async fn ask<T>(&self, make: impl FnOnce(oneshot::Sender<T>) -> Command) -> Option<T> {
        let (tx, rx) = oneshot::channel();
        self.commands.send(make(tx)).ok()?;
        rx.await.ok()
    }

    pub async fn handle(&self, msg: ClientMessage) -> Ack {
        let ack = match msg {
            ClientMessage::Trigger { layer, action } => {
                self.ask(|reply| Command::Trigger { layer, action, reply }).await
            }
            ClientMessage::Param { name, value } => self.ask(|reply| Command::Param { name, value, reply }).await,
        };
        ack.unwrap_or_else(|| Ack {
            ok: false,
            column: 0,
            error: Some("session stopped".into()),
        })
    }

    /// Every column played from now on, in order.
    pub fn subscribe(&self) -> mpsc::UnboundedReceiver<Arc<StreamColumn>> {
        let (tx, rx) = mpsc::unbounded_channel();
        // a stopped engine simply yields a closed stream
        let _ = self.commands.send(Command::Subscribe(tx));
        rx
    }

    pub fn latest(&self) -> watch::Receiver<Option<Arc<StreamColumn>>> {
        self.latest.clone()
    }

    pub fn quality(&self) -> Quality {
        *self.quality.borrow()
    }

    pub async fn recording(&self) -> Option<PerformanceRecording> {
        self.ask(Command::Recording).await
    }
}

impl Drop for SessionHandle {
    fn drop(&mut self) {
        let _ = self.commands.send(Command::Shutdown);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn run_engine(
    mut session: Session,
    rx: std_mpsc::Receiver<Command>,
    latest: watch::Sender<Option<Arc<StreamColumn>>>,
    quality: watch::Sender<Quality>,
) {
    let fps = session.config().frame_rate;
    let start = Instant::now();
    let elapsed_ms = || start.elapsed().as_millis() as u64;
    let mut subscribers: Vec<mpsc::UnboundedSender<Arc<StreamColumn>>> = Vec::new();
    loop {
        let next_ms = ((session.playhead() + 1) as f64 * 1000.0 / fps).ceil() as u64;
        let wait = Duration::from_millis(next_ms.saturating_sub(elapsed_ms()));
        match rx.recv_timeout(wait) {
            Ok(Command::Trigger { layer, action, reply }) => {
                let ack = match session.trigger(elapsed_ms(), layer, &action) {
                    Ok(column) => ok_ack(column),
                    Err(e) => err_ack(session.playhead(), e),
                };
                let _ = reply.send(ack);
            }
            Ok(Command::Param { name, value, reply }) => {
                let ack = match session.set_param(elapsed_ms(), &name, &value) {
                    Ok(column) => ok_ack(column),
                    Err(e) => err_ack(session.playhead(), e),
                };
                quality.send_replace(session.quality());
                let _ = reply.send(ack);
            }
            Ok(Command::Subscribe(tx)) => subscribers.push(tx),
            Ok(Command::Recording(reply)) => {
                let _ = reply.send(session.finish_recording());
            }
            Ok(Command::Shutdown) | Err(std_mpsc::RecvTimeoutError::Disconnected) => break,
            Err(std_mpsc::RecvTimeoutError::Timeout) => {}
        }
        match session.advance_to(elapsed_ms()) {
            Ok(played) => {
                for (column, frames) in played {
                    let c = Arc::new(StreamColumn {
                        column: column as u64,
                        frames,
                    });
                    subscribers.retain(|s| s.send(c.clone()).is_ok());
                    latest.send_replace(Some(c));
                }
            }
            Err(e) => {
                error!("synthesis failed, stopping session: {e}");
                break;
            }
        }
    }
    debug!("engine thread stopped at column {}", session.playhead());
}

fn ok_ack(column: usize) -> Ack {
    Ack {
        ok: true,
        column: column as u64,
        error: None,
    }
}

fn err_ack(column: usize, e: impl std::fmt::Display) -> Ack {
    Ack {
        ok: false,
        column: column as u64,
        error: Some(e.to_string()),
    }
}

/// Shared state of the HTTP handlers.
pub struct AppState {
    pub project: Arc<PreparedProject>,
    pub session: SessionHandle,
    pub order: RenderOrder,
    pub recordings_dir: PathBuf,
    recordings: Mutex<HashMap<String, PerformanceRecording>>,
}

impl AppState {
    pub fn new(project: Arc<PreparedProject>, session: SessionHandle, recordings_dir: PathBuf) -> Self {
        Self {
            project,
            session,
            order: RenderOrder::default(),
            recordings_dir,
            recordings: Mutex::new(HashMap::new()),
        }
    }
}

/// Starts a live session for a prepared project.
pub fn start_session(project: &PreparedProject, quality: Quality) -> anyhow::Result<SessionHandle> {
    let engine = project.default_engine()?;
    let session = Session::new(engine, project.session_config(quality)?)?;
    Ok(SessionHandle::spawn(session))
}

/// Default directory for saved recordings.
pub fn recordings_dir(project: &PreparedProject) -> PathBuf {
    project.project.root.join("recordings")
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/project", get(get_project))
        .route("/background.png", get(get_background))
        .route("/sprites/{actor}/{file}", get(get_sprite))
        .route("/recordings", axum::routing::post(post_recording))
        .route("/recordings/{id}", get(get_recording))
        .route("/control", get(control_ws))
        .route("/stream", get(stream_ws))
        .route("/stream/png", get(png_stream_ws))
        .with_state(state)
}

/// Binds `addr` and serves until `shutdown` resolves.
pub async fn serve(
    state: Arc<AppState>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> anyhow::Result<()> {
    info!("serving on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
        .context("server failed")
}

fn error_response(status: StatusCode, msg: impl std::fmt::Display) -> Response {
    (status, Json(json!({ "error": msg.to_string() }))).into_response()
}

async fn get_project(State(state): State<Arc<AppState>>) -> Response {
    let p = &state.project;
    let m = &p.project.manifest;
    let layers: Vec<serde_json::Value> = m
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let actor = m.actor(&l.actor).expect("validated layer");
            json!({
                "index": i,
                "actor": l.actor,
                "default_action": l.default_action,
                "offset": l.offset,
                "frames": p.project.actors[m.actor_index(&l.actor).expect("validated")].sequence.len(),
                "actions": actor.actions,
            })
        })
        .collect();
    let (w, h) = p.background.dimensions();
    Json(json!({
        "name": m.name,
        "manifest_hash": p.manifest_hash(),
        "frame_rate": m.frame_rate,
        "width": w,
        "height": h,
        "layers": layers,
        "quality": state.session.quality(),
        "manifest": m,
    }))
    .into_response()
}

fn png_bytes(img: impl Into<image::DynamicImage>) -> anyhow::Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.into().write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

fn png_response(bytes: Vec<u8>, extra: HeaderMap) -> Response {
    let mut headers = extra;
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
    (headers, bytes).into_response()
}

async fn get_background(State(state): State<Arc<AppState>>) -> Response {
    match png_bytes(state.project.background.as_ref().clone()) {
        Ok(b) => png_response(b, HeaderMap::new()),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

/// RGBA cut-out of one actor frame and its top-left corner in source
/// coordinates. Full-frame actors return the whole opaque frame.
pub fn sprite(project: &PreparedProject, actor: usize, t: usize) -> Option<(RgbaImage, [u32; 2])> {
    let seq = &project.project.actors.get(actor)?.sequence;
    if t >= seq.len() {
        return None;
    }
    let frame = seq.source().frame(t);
    let Some(masks) = project.actors[actor].masks.as_ref() else {
        return Some((image::DynamicImage::ImageRgb8(frame.clone()).to_rgba8(), [0, 0]));
    };
    let mask = &masks[t];
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                (x0, y0, x1, y1) = (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1));
            }
        }
    }
    if x0 == u32::MAX {
        return Some((RgbaImage::new(1, 1), [0, 0]));
    }
    let img = RgbaImage::from_fn(x1 - x0, y1 - y0, |x, y| {
        let (sx, sy) = (x + x0, y + y0);
        let p = frame.get_pixel(sx, sy).0;
        Rgba([p[0], p[1], p[2], if mask.get(sx, sy) { 255 } else { 0 }])
    });
    Some((img, [x0, y0]))
}

async fn get_sprite(State(state): State<Arc<AppState>>, UrlPath((actor, file)): UrlPath<(String, String)>) -> Response {
    let Some(t) = file.strip_suffix(".png").and_then(|s| s.parse::<usize>().ok()) else {
        return error_response(StatusCode::NOT_FOUND, format!("no sprite {file:?}"));
    };
    let Ok(a) = state.project.project.actor_index(&actor) else {
        return error_response(StatusCode::NOT_FOUND, format!("unknown actor {actor:?}"));
    };
    let project = state.project.clone();
    let made = tokio::task::spawn_blocking(move || sprite(&project, a, t).map(|(img, o)| (png_bytes(img), o))).await;
    match made {
        Ok(Some((Ok(bytes), [x, y]))) => {
            let mut h = HeaderMap::new();
            h.insert(
                "x-sprite-origin",
                HeaderValue::from_str(&format!("{x},{y}")).expect("ascii digits"),
            );
            h.insert(
                header::CACHE_CONTROL,
                HeaderValue::from_static("public, max-age=31536000, immutable"),
            );
            png_response(bytes, h)
        }
        Ok(None) => error_response(StatusCode::NOT_FOUND, format!("actor {actor:?} has no frame {t}")),
        Ok(Some((Err(e), _))) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

fn recording_id(rec: &PerformanceRecording) -> String {
    content_key([rec.to_json().as_bytes()])[..16].to_string()
}

/// Stores the posted recording, or a snapshot of the live session's when
/// the body is empty.
async fn post_recording(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let rec = if body.iter().all(u8::is_ascii_whitespace) {
        match state.session.recording().await {
            Some(r) => r,
            None => return error_response(StatusCode::SERVICE_UNAVAILABLE, "session stopped"),
        }
    } else {
        let parsed = std::str::from_utf8(&body)
            .map_err(|e| e.to_string())
            .and_then(|s| PerformanceRecording::from_json(s).map_err(|e| e.to_string()));
        match parsed {
            Ok(r) => r,
            Err(e) => return error_response(StatusCode::BAD_REQUEST, e),
        }
    };
    if let Err(e) = rec
        .validate()
        .and_then(|_| rec.check_hash(state.project.manifest_hash()))
    {
        return error_response(StatusCode::UNPROCESSABLE_ENTITY, e);
    }
    let id = recording_id(&rec);
    let path = state.recordings_dir.join(format!("{id}.json"));
    let saved = std::fs::create_dir_all(&state.recordings_dir)
        .map_err(anyhow::Error::from)
        .and_then(|_| rec.save(&path).map_err(anyhow::Error::from));
    if let Err(e) = saved {
        warn!("could not save recording {id}: {e}");
    }
    let body = json!({
        "id": id,
        "path": path,
        "events": rec.events.len(),
        "columns": rec.columns(),
    });
    state.recordings.lock().expect("recordings lock").insert(id, rec);
    (StatusCode::CREATED, Json(body)).into_response()
}

fn load_saved(dir: &Path, id: &str) -> Option<PerformanceRecording> {
    if !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        return None;
    }
    PerformanceRecording::load(&dir.join(format!("{id}.json"))).ok()
}

async fn get_recording(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    let known = state.recordings.lock().expect("recordings lock").get(&id).cloned();
    match known.or_else(|| load_saved(&state.recordings_dir, &id)) {
        Some(r) => Json(r).into_response(),
        None => error_response(StatusCode::NOT_FOUND, format!("no recording {id:?}")),
    }
}

async fn control_ws(ws: WebSocketUpgrade, State(state): State<Arc<AppState>>) -> Response {
    ws.on_upgrade(move |socket| control_loop(socket, state))
}

async fn control_loop(mut socket: WebSocket, state: Arc<AppState>) {
    while let Some(Ok(msg)) = socket.recv().await {
        let text = match msg {
            Message::Text(t) => t,
            Message::Close(_) => break,
            _ => continue,
        };
        let ack = match serde_json::from_str::<ClientMessage>(&text) {
            Ok(m) => state.session.handle(m).await,
            Err(e) => err_ack(0, format!("bad message: {e}")),
        };
        let reply = serde_json::to_string(&ack).expect("ack serializes");
        if socket.send(Message::Text(reply.into())).await.is_err() {
            break;
        }
    }
}

async fn stream_ws(ws: WebSocketUpgrade, State(state): State<Arc<AppState>>) -> Response {
    ws.on_upgrade(move |socket| stream_loop(socket, state))
}

async fn stream_loop(mut socket: WebSocket, state: Arc<AppState>) {
    let mut columns = state.session.subscribe();
    loop {
        tokio::select! {
            c = columns.recv() => {
                let Some(c) = c else { break };
                let bytes = encode_stream_column(c.column, &c.frames);
                if socket.send(Message::Binary(bytes.into())).await.is_err() {
                    break;
                }
            }
            m = socket.recv() => match m {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                _ => {}
            },
        }
    }
}

async fn png_stream_ws(ws: WebSocketUpgrade, State(state): State<Arc<AppState>>) -> Response {
    ws.on_upgrade(move |socket| png_stream_loop(socket, state))
}

fn render_column(state: &AppState, c: &StreamColumn) -> anyhow::Result<Vec<u8>> {
    let timeline = OutputTimeline {
        actors: state
            .project
            .project
            .manifest
            .layers
            .iter()
            .map(|l| l.actor.clone())
            .collect(),
        rows: c.frames.iter().map(|&f| vec![f]).collect(),
    };
    let job = state
        .project
        .render_job(timeline, state.session.quality(), state.order)?;
    let (img, _) = render_frame(&job, 0)?;
    png_bytes(img)
}

/// Sends a PNG of the newest column whenever the previous one has gone out;
/// columns played in between are skipped.
async fn png_stream_loop(mut socket: WebSocket, state: Arc<AppState>) {
    let mut latest = state.session.latest();
    loop {
        tokio::select! {
            changed = latest.changed() => {
                if changed.is_err() {
                    break;
                }
                let Some(c) = latest.borrow_and_update().clone() else { continue };
                let st = state.clone();
                let png = tokio::task::spawn_blocking(move || render_column(&st, &c)).await;
                match png {
                    Ok(Ok(bytes)) => {
                        if socket.send(Message::Binary(bytes.into())).await.is_err() {
                            break;
                        }
                    }
                    Ok(Err(e)) => warn!("image stream render failed: {e}"),
                    Err(e) => warn!("image stream task failed: {e}"),
                }
            }
            m = socket.recv() => match m {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                _ => {}
            },
        }
    }
}
