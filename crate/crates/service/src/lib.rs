//! HTTP and WebSocket front end for conversation sessions.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/personas` | personas available for new sessions |
//! | GET | `/sessions` | summaries of stored sessions |
//! | POST | `/sessions` | `{persona, mode}` → `{session_id}` |
//! | POST | `/sessions/{id}/messages` | `{text}` → 202, or the turn result with `?wait=true` |
//! | GET | `/sessions/{id}/transcript` | events; `?include_internal=true` adds frames and stages |
//! | GET | `/sessions/{id}/stream` | WebSocket of [`WireEvent`]s from `?from_seq=N` |

mod hub;
mod routes;
mod wire;

use std::net::SocketAddr;
use std::path::PathBuf;

use rlp_core::backends::BackendConfig;
use serde::{Deserialize, Serialize};

pub use hub::{Hub, HubError, PersonaInfo, PostOutcome, Subscription, Turn};
pub use routes::router;
pub use wire::{Transient, WireEvent};

pub const DEFAULT_BIND: &str = "127.0.0.1:7878";

/// Per-subscriber buffer; a subscriber further behind than this is dropped.
pub const DEFAULT_BUFFER: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_bind")]
    pub bind: SocketAddr,
    #[serde(default = "default_personas")]
    pub personas_dir: PathBuf,
    #[serde(default = "default_sessions")]
    pub sessions_dir: PathBuf,
    #[serde(default = "default_buffer")]
    pub buffer: usize,
    #[serde(default)]
    pub backend: BackendConfig,
}

fn default_bind() -> SocketAddr {
    DEFAULT_BIND.parse().expect("valid default address")
}

fn default_personas() -> PathBuf {
    "personas".into()
}

fn default_sessions() -> PathBuf {
    "sessions".into()
}

fn default_buffer() -> usize {
    DEFAULT_BUFFER
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: default_bind(),
            personas_dir: default_personas(),
            sessions_dir: default_sessions(),
            buffer: default_buffer(),
            backend: BackendConfig::default(),
        }
    }
}

/// Serves until the listener fails or the task is cancelled.
pub async fn serve(listener: tokio::net::TcpListener, hub: Hub) -> std::io::Result<()> {
    axum::serve(listener, router(hub)).await
}

/// Binds `config.bind` and serves.
pub async fn run(config: ServiceConfig) -> Result<(), HubError> {
    let listener = tokio::net::TcpListener::bind(config.bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    let hub = Hub::new(config)?;
    serve(listener, hub).await?;
    Ok(())
}
