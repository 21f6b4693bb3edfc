//! HTTP and WebSocket surface.
//!
//! | route | |
//! |---|---|
//! | `POST /sessions` | body is an optional JSON object of config overrides; 201 `{"session_id"}` |
//! | `GET /sessions/{id}/transcript` | messages in transcript order plus the rendered text |
//! | `GET /sessions/{id}/metrics` | the metrics report |
//! | `GET /sessions/{id}/stream` | WebSocket; one JSON wire event per text message, newline terminated |
//! | `GET /healthz` | liveness |
//!
//! Errors are `{"code", "detail"}` with a matching status.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::ws::{Message as WsMessage, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use overlapchat::wire::{decode_event, encode_event};
use overlapchat::WireEvent;
use serde_json::json;

use crate::hub::{Hub, HubError};
use crate::live::{AttachError, Attachment, SessionStatus};

pub fn router(hub: Arc<Hub>) -> Router {
    Router::new()
        .route("/", get(index))
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/transcript", get(transcript))
        .route("/sessions/{id}/metrics", get(metrics))
        .route("/sessions/{id}/stream", get(stream))
        .with_state(hub)
}

fn error(status: StatusCode, code: &str, detail: impl Into<String>) -> Response {
    (status, Json(json!({"code": code, "detail": detail.into()}))).into_response()
}

fn not_found(id: &str) -> Response {
    error(StatusCode::NOT_FOUND, "NOT_FOUND", format!("no session {id}"))
}

async fn index() -> Html<&'static str> {
    Html(
        "<!doctype html><title>overlapchat</title>\
         <p>overlapchat gateway. Create a session with <code>POST /sessions</code> \
         and attach to <code>/sessions/{id}/stream</code>.</p>",
    )
}

async fn healthz(State(hub): State<Arc<Hub>>) -> Json<serde_json::Value> {
    Json(json!({"status": "ok", "active_sessions": hub.active()}))
}

async fn create_session(State(hub): State<Arc<Hub>>, body: Bytes) -> Response {
    let overrides: Option<serde_json::Value> = if body.iter().all(u8::is_ascii_whitespace) {
        None
    } else {
        match serde_json::from_slice(&body) {
            Ok(v) => Some(v),
            Err(e) => return error(StatusCode::BAD_REQUEST, "BAD_OVERRIDE", e.to_string()),
        }
    };
    match hub.create(overrides.as_ref()) {
        Ok(handle) => (StatusCode::CREATED, Json(json!({"session_id": handle.id}))).into_response(),
        Err(e) => {
            let status = match e {
                HubError::Limit(_) => StatusCode::SERVICE_UNAVAILABLE,
                HubError::BadOverride(_) => StatusCode::BAD_REQUEST,
                HubError::LogIo(_) => StatusCode::INTERNAL_SERVER_ERROR,
            };
            error(status, e.code(), e.to_string())
        }
    }
}

fn status_name(status: SessionStatus) -> &'static str {
    match status {
        SessionStatus::Active => "active",
        SessionStatus::Closed => "closed",
    }
}

async fn transcript(State(hub): State<Arc<Hub>>, Path(id): Path<String>) -> Response {
    let Some(handle) = hub.get(&id) else {
        return not_found(&id);
    };
    let transcript = handle.transcript().await;
    Json(json!({
        "session_id": id,
        "status": status_name(handle.status()),
        "messages": transcript.messages,
        "text": transcript.to_string(),
    }))
    .into_response()
}

async fn metrics(State(hub): State<Arc<Hub>>, Path(id): Path<String>) -> Response {
    match hub.get(&id) {
        Some(handle) => Json(handle.metrics().await).into_response(),
        None => not_found(&id),
    }
}

async fn stream(State(hub): State<Arc<Hub>>, Path(id): Path<String>, upgrade: WebSocketUpgrade) -> Response {
    let Some(handle) = hub.get(&id) else {
        return not_found(&id);
    };
    match handle.attach() {
        Ok(attachment) => upgrade.on_upgrade(move |socket| pump(socket, attachment)),
        Err(e @ AttachError::AlreadyAttached) => error(StatusCode::CONFLICT, e.code(), "a client is already attached"),
        Err(e @ AttachError::NotFound) => error(StatusCode::NOT_FOUND, e.code(), format!("session {id} is closed")),
    }
}

/// Moves frames both ways until either side goes away, then closes the session.
async fn pump(socket: WebSocket, attachment: Attachment) {
    let (mut sink, mut source) = socket.split();
    let outbox = attachment.outbox.clone();
    let mut writer = tokio::spawn(async move {
        while let Some(event) = outbox.next().await {
            let text = encode_event(&event) + "\n";
            if sink.send(WsMessage::Text(text.into())).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });
    let mut writer_done = false;
    loop {
        tokio::select! {
            incoming = source.next() => match incoming {
                Some(Ok(WsMessage::Text(text))) => accept(&attachment, text.as_str()),
                Some(Ok(WsMessage::Binary(bytes))) => match std::str::from_utf8(&bytes) {
                    Ok(text) => accept(&attachment, text),
                    Err(e) => attachment.handle.notify(WireEvent::error("PARSE_ERROR", format!("invalid utf-8: {e}"))),
                },
                Some(Ok(WsMessage::Close(_))) | Some(Err(_)) | None => break,
                Some(Ok(_)) => {}
            },
            _ = &mut writer => {
                writer_done = true;
                break;
            }
        }
    }
    let handle = attachment.handle.clone();
    drop(attachment);
    // let the writer flush what the session queued before it stopped
    let _ = handle.wait_closed().await;
    if !writer_done {
        let _ = writer.await;
    }
}

/// A text message may carry several newline-separated frames.
fn accept(attachment: &Attachment, text: &str) {
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match decode_event(line) {
            Ok(event) => attachment.send(event),
            Err(e) => attachment
                .handle
                .notify(WireEvent::error("PARSE_ERROR", e.detail)),
        }
    }
}

/// Serves until `shutdown` resolves, then closes every session so their logs
/// are flushed.
pub async fn serve(
    listener: tokio::net::TcpListener,
    hub: Arc<Hub>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let result = axum::serve(listener, router(hub.clone()))
        .with_graceful_shutdown(shutdown)
        .await;
    hub.close_all();
    result
}
