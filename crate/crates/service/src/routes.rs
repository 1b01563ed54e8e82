use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use rlp_core::cognition::Mode;
use serde::Deserialize;
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;

use crate::hub::{Hub, HubError, PostOutcome, Subscription};
use crate::wire::{Transient, WireEvent};

pub fn router(hub: Hub) -> Router {
    Router::new()
        .route("/personas", get(personas))
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/transcript", get(transcript))
        .route("/sessions/{id}/stream", get(stream))
        .with_state(hub)
}

impl IntoResponse for HubError {
    fn into_response(self) -> Response {
        let status = match &self {
            HubError::UnknownPersona(_) | HubError::UnknownSession(_) => StatusCode::NOT_FOUND,
            HubError::Busy(_) => StatusCode::CONFLICT,
            HubError::Invalid(_) | HubError::Cognition(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            log::error!("{self}");
        }
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

/// Runs blocking hub work on the blocking pool.
async fn blocking<T, F>(f: F) -> Result<T, HubError>
where
    F: FnOnce() -> Result<T, HubError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| HubError::Io(std::io::Error::other(e.to_string())))?
}

async fn personas(State(hub): State<Hub>) -> Result<impl IntoResponse, HubError> {
    Ok(Json(blocking(move || hub.personas()).await?))
}

async fn list_sessions(State(hub): State<Hub>) -> Result<impl IntoResponse, HubError> {
    Ok(Json(blocking(move || hub.list_sessions()).await?))
}

#[derive(Deserialize)]
struct CreateBody {
    persona: String,
    #[serde(default = "default_mode")]
    mode: Mode,
}

fn default_mode() -> Mode {
    Mode::Rlp
}

async fn create_session(
    State(hub): State<Hub>,
    Json(body): Json<CreateBody>,
) -> Result<impl IntoResponse, HubError> {
    let id = blocking(move || hub.create_session(&body.persona, body.mode)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id }))))
}

#[derive(Deserialize)]
struct MessageBody {
    text: String,
}

#[derive(Deserialize, Default)]
struct MessageQuery {
    #[serde(default)]
    wait: bool,
}

async fn post_message(
    State(hub): State<Hub>,
    Path(id): Path<String>,
    Query(q): Query<MessageQuery>,
    Json(body): Json<MessageBody>,
) -> Result<Response, HubError> {
    if body.text.trim().is_empty() {
        return Err(HubError::Invalid("message text is empty".into()));
    }
    let turn = blocking(move || hub.begin(&id)).await?;
    let turn_index = turn.turn_index();
    let session_id = turn.session_id().to_string();
    let task = tokio::task::spawn_blocking(move || turn.run(&body.text));
    if !q.wait {
        tokio::spawn(async move {
            match task.await {
                Ok(Ok(_)) => {}
                Ok(Err(e)) => log::error!("session {session_id}: {e}"),
                Err(e) => log::error!("session {session_id}: step task failed: {e}"),
            }
        });
        return Ok((StatusCode::ACCEPTED, Json(json!({ "turn_index": turn_index }))).into_response());
    }
    let outcome = task
        .await
        .map_err(|e| HubError::Io(std::io::Error::other(e.to_string())))??;
    let status = match outcome {
        PostOutcome::Committed { .. } => StatusCode::OK,
        PostOutcome::Failed { .. } => StatusCode::UNPROCESSABLE_ENTITY,
    };
    Ok((status, Json(outcome)).into_response())
}

#[derive(Deserialize)]
struct TranscriptQuery {
    #[serde(default)]
    include_internal: bool,
}

async fn transcript(
    State(hub): State<Hub>,
    Path(id): Path<String>,
    Query(q): Query<TranscriptQuery>,
) -> Result<impl IntoResponse, HubError> {
    Ok(Json(blocking(move || hub.transcript(&id, q.include_internal)).await?))
}

#[derive(Deserialize)]
struct StreamQuery {
    #[serde(default)]
    from_seq: u64,
}

async fn stream(
    State(hub): State<Hub>,
    Path(id): Path<String>,
    Query(q): Query<StreamQuery>,
    ws: WebSocketUpgrade,
) -> Result<Response, HubError> {
    let sub = blocking(move || hub.subscribe(&id, q.from_seq)).await?;
    Ok(ws.on_upgrade(move |socket| pump(socket, sub)))
}

fn text(event: &WireEvent) -> Message {
    Message::Text(serde_json::to_string(event).expect("wire events serialize").into())
}

/// Backlog, then `caught_up`, then live events until either side closes.
async fn pump(socket: WebSocket, sub: Subscription) {
    let Subscription { backlog, next_seq, mut live } = sub;
    let (mut tx, mut rx) = socket.split();
    for event in backlog {
        if tx.send(text(&WireEvent::Record(event))).await.is_err() {
            return;
        }
    }
    if tx.send(text(&WireEvent::Transient(Transient::CaughtUp { next_seq }))).await.is_err() {
        return;
    }
    let mut expected = next_seq;
    loop {
        tokio::select! {
            event = live.recv() => match event {
                Ok(event) => {
                    if let Some(seq) = event.seq() {
                        if seq < expected {
                            continue;
                        }
                        expected = seq + 1;
                    }
                    if tx.send(text(&event)).await.is_err() {
                        return;
                    }
                }
                Err(RecvError::Lagged(missed)) => {
                    log::warn!("disconnecting subscriber {missed} events behind");
                    let _ = tx.send(text(&WireEvent::Transient(Transient::Lagged { missed }))).await;
                    let _ = tx.send(Message::Close(None)).await;
                    return;
                }
                Err(RecvError::Closed) => return,
            },
            incoming = rx.next() => match incoming {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}
