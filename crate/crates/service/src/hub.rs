use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock, RwLockWriteGuard};

use rlp_core::backends::{BackendConfig, BackendError, BackendHandle};
use rlp_core::cognition::{CognitionError, ConversationState, Mode};
use rlp_core::persona::{discover_personas, PersonaError, PersonaSpec};
use rlp_core::session::{Session, SessionError, SessionUpdate};
use rlp_core::store::{SessionEvent, SessionStore, SessionSummary, StoreError};
use serde::Serialize;
use thiserror::Error;
use tokio::sync::broadcast;

use crate::wire::{Transient, WireEvent};
use crate::ServiceConfig;

#[derive(Debug, Error)]
pub enum HubError {
    #[error("unknown persona `{0}`")]
    UnknownPersona(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("session `{0}` is busy with another message")]
    Busy(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Persona(#[from] PersonaError),
    #[error(transparent)]
    Cognition(#[from] CognitionError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PersonaInfo {
    pub name: String,
    pub display_name: String,
}

/// Result of a turn that ran.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PostOutcome {
    Committed { turn_index: u64, agent_message: String },
    Failed { turn_index: u64, error: String },
}

/// Live sessions keyed by id. Cheap to clone. Methods do file I/O and
/// run steps, so call them off the async executor.
#[derive(Clone)]
pub struct Hub {
    inner: Arc<Inner>,
}

struct Inner {
    store: SessionStore,
    personas_dir: PathBuf,
    backend: BackendConfig,
    buffer: usize,
    slots: Mutex<HashMap<String, Arc<Slot>>>,
}

struct Slot {
    busy: AtomicBool,
    session: Mutex<Session<BackendHandle>>,
    feed: RwLock<Feed>,
}

/// Events so far and the live fan-out. Appends and broadcasts happen under
/// one write lock, so a subscriber's backlog and live feed meet exactly.
struct Feed {
    events: Vec<SessionEvent>,
    tx: broadcast::Sender<WireEvent>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl Slot {
    fn new(session: Session<BackendHandle>, buffer: usize) -> Self {
        let (tx, _) = broadcast::channel(buffer.max(1));
        let feed = Feed { events: session.events().to_vec(), tx };
        Self { busy: AtomicBool::new(false), session: Mutex::new(session), feed: RwLock::new(feed) }
    }

    fn feed(&self) -> RwLockWriteGuard<'_, Feed> {
        self.feed.write().unwrap_or_else(|e| e.into_inner())
    }
}

/// Exclusive right to run the next turn of one session.
pub struct Turn {
    id: String,
    slot: Arc<Slot>,
}

impl Turn {
    pub fn session_id(&self) -> &str {
        &self.id
    }

    /// Index the turn will get.
    pub fn turn_index(&self) -> u64 {
        lock(&self.slot.session).state().next_turn()
    }

    /// Runs the step, appending and broadcasting every event.
    pub fn run(self, text: &str) -> Result<PostOutcome, HubError> {
        let slot = &self.slot;
        let mut session = lock(&slot.session);
        let turn_index = session.state().next_turn();
        let result = session.send_with(text, &mut |update| {
            let mut feed = slot.feed();
            let wire = match update {
                SessionUpdate::Event(e) => {
                    feed.events.push(e.clone());
                    WireEvent::Record(e.clone())
                }
                SessionUpdate::Token { attempt, text } => WireEvent::Transient(Transient::MessageToken {
                    turn_index,
                    attempt,
                    text: text.to_string(),
                }),
                SessionUpdate::AttemptFailed { attempt, error } => {
                    WireEvent::Transient(Transient::AttemptFailed {
                        turn_index,
                        attempt,
                        error: error.to_string(),
                    })
                }
            };
            // no receivers is fine
            let _ = feed.tx.send(wire);
        });
        match result {
            Ok(outcome) => Ok(PostOutcome::Committed { turn_index, agent_message: outcome.outgoing }),
            Err(SessionError::Step(f)) => Ok(PostOutcome::Failed { turn_index, error: f.error.to_string() }),
            Err(SessionError::Store(e)) => Err(e.into()),
        }
    }
}

impl Drop for Turn {
    fn drop(&mut self) {
        self.slot.busy.store(false, Ordering::Release);
    }
}

/// A subscriber's starting point.
pub struct Subscription {
    pub backlog: Vec<SessionEvent>,
    pub next_seq: u64,
    pub live: broadcast::Receiver<WireEvent>,
}

impl Hub {
    pub fn new(config: ServiceConfig) -> Result<Self, HubError> {
        let store = SessionStore::new(&config.sessions_dir)?;
        Ok(Self::with_store(store, config.personas_dir, config.backend, config.buffer))
    }

    pub fn with_store(
        store: SessionStore,
        personas_dir: impl Into<PathBuf>,
        backend: BackendConfig,
        buffer: usize,
    ) -> Self {
        Self {
            inner: Arc::new(Inner {
                store,
                personas_dir: personas_dir.into(),
                backend,
                buffer,
                slots: Mutex::new(HashMap::new()),
            }),
        }
    }

    pub fn personas(&self) -> Result<Vec<PersonaInfo>, HubError> {
        Ok(discover_personas(&self.inner.personas_dir)?
            .into_iter()
            .map(|(_, p)| PersonaInfo { display_name: p.display().to_string(), name: p.name })
            .collect())
    }

    fn persona(&self, name: &str) -> Result<PersonaSpec, HubError> {
        discover_personas(&self.inner.personas_dir)?
            .into_iter()
            .map(|(_, p)| p)
            .find(|p| p.name == name)
            .ok_or_else(|| HubError::UnknownPersona(name.to_string()))
    }

    pub fn create_session(&self, persona: &str, mode: Mode) -> Result<String, HubError> {
        let persona = self.persona(persona)?;
        let state = ConversationState::new(persona, mode)?;
        let backend = self.inner.backend.build()?;
        let id = SessionStore::new_session_id();
        let log = self.inner.store.create(&id)?;
        let session = Session::start(id.clone(), state, backend, Some(log)).map_err(|e| match e {
            SessionError::Store(e) => HubError::Store(e),
            SessionError::Step(f) => HubError::Invalid(f.to_string()),
        })?;
        let slot = Arc::new(Slot::new(session, self.inner.buffer));
        lock(&self.inner.slots).insert(id.clone(), slot);
        log::info!("created session {id}");
        Ok(id)
    }

    pub fn list_sessions(&self) -> Result<Vec<SessionSummary>, HubError> {
        Ok(self.inner.store.list_sessions()?)
    }

    /// The live slot for `id`, loading it from the store on first use.
    fn slot(&self, id: &str) -> Result<Arc<Slot>, HubError> {
        if let Some(slot) = lock(&self.inner.slots).get(id) {
            return Ok(slot.clone());
        }
        if !self.inner.store.exists(id) {
            return Err(HubError::UnknownSession(id.to_string()));
        }
        let loaded = self.inner.store.load_session(id)?;
        for w in &loaded.warnings {
            log::warn!("session {id}: {w}");
        }
        let log = self.inner.store.open(id)?;
        let backend = self.inner.backend.build()?;
        let slot = Arc::new(Slot::new(Session::resume(loaded, backend, Some(log)), self.inner.buffer));
        // another request may have loaded it meanwhile; keep the first
        Ok(lock(&self.inner.slots).entry(id.to_string()).or_insert(slot).clone())
    }

    /// Claims the session for one turn, or fails with `Busy`.
    pub fn begin(&self, id: &str) -> Result<Turn, HubError> {
        let slot = self.slot(id)?;
        if slot.busy.compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire).is_err() {
            return Err(HubError::Busy(id.to_string()));
        }
        Ok(Turn { id: id.to_string(), slot })
    }

    /// Runs one turn to completion.
    pub fn post_message(&self, id: &str, text: &str) -> Result<PostOutcome, HubError> {
        if text.trim().is_empty() {
            return Err(HubError::Invalid("message text is empty".into()));
        }
        self.begin(id)?.run(text)
    }

    pub fn transcript(&self, id: &str, include_internal: bool) -> Result<Vec<SessionEvent>, HubError> {
        let slot = self.slot(id)?;
        let feed = slot.feed.read().unwrap_or_else(|e| e.into_inner());
        Ok(feed
            .events
            .iter()
            .filter(|e| include_internal || e.payload.is_visible())
            .cloned()
            .collect())
    }

    pub fn subscribe(&self, id: &str, from_seq: u64) -> Result<Subscription, HubError> {
        let slot = self.slot(id)?;
        let feed = slot.feed.read().unwrap_or_else(|e| e.into_inner());
        let start = (from_seq as usize).min(feed.events.len());
        Ok(Subscription {
            backlog: feed.events[start..].to_vec(),
            next_seq: feed.events.len() as u64,
            live: feed.tx.subscribe(),
        })
    }
}
