//! Append-only session logs.
//!
//! Each session is one file, `<root>/<session id>.jsonl`, holding one JSON
//! record per line. Records are never rewritten. A final line cut short by a
//! crash is dropped on load with a warning; any other unreadable line makes
//! the log corrupt.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::BackendSnapshot;
use crate::cognition::{
    CognitiveFrame, ConversationState, GenerationRecord, Mode, StageEvent, UserMessage,
    WindowPolicy,
};
use crate::persona::PersonaSpec;
use crate::prompt::PromptTemplate;
use crate::tagparse::TagSchema;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub time: DateTime<Utc>,
    #[serde(flatten)]
    pub payload: EventPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum EventPayload {
    SessionCreated {
        session_id: String,
        persona: PersonaSpec,
        mode: Mode,
        window_policy: WindowPolicy,
        initialization: StageEvent,
    },
    ConfigSnapshot {
        backend: BackendSnapshot,
        persona_digest: String,
        tag_schema: Option<TagSchema>,
        template: PromptTemplate,
        template_digest: String,
    },
    UserMessage {
        turn_index: u64,
        text: String,
    },
    StageEvent(StageEvent),
    FrameCommitted {
        frame: CognitiveFrame,
        attempts: Vec<GenerationRecord>,
    },
    AgentMessage {
        turn_index: u64,
        text: String,
    },
    StepError {
        turn_index: u64,
        error: String,
        attempts: Vec<GenerationRecord>,
    },
}

impl EventPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            EventPayload::SessionCreated { .. } => "session_created",
            EventPayload::ConfigSnapshot { .. } => "config_snapshot",
            EventPayload::UserMessage { .. } => "user_message",
            EventPayload::StageEvent(_) => "stage_event",
            EventPayload::FrameCommitted { .. } => "frame_committed",
            EventPayload::AgentMessage { .. } => "agent_message",
            EventPayload::StepError { .. } => "step_error",
        }
    }

    /// Part of the chat a user would see (no internal frames or stages).
    pub fn is_visible(&self) -> bool {
        matches!(
            self,
            EventPayload::SessionCreated { .. }
                | EventPayload::UserMessage { .. }
                | EventPayload::AgentMessage { .. }
                | EventPayload::StepError { .. }
        )
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("sequence conflict: expected seq {expected}, got {got}")]
    SequenceConflict { expected: u64, got: u64 },
    #[error("session {0} does not exist")]
    UnknownSession(String),
    #[error("session {0} already exists")]
    AlreadyExists(String),
    #[error("the first event of a session must be session_created")]
    NotCreated,
    #[error("corrupt log {path}, record {record}: {message}")]
    Corrupt { path: PathBuf, record: usize, message: String },
    #[error("log {0} ends in a torn record; refusing to append")]
    TornTail(PathBuf),
    #[error("storage I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Outcome of reading a log file.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadLog {
    pub events: Vec<SessionEvent>,
    pub warnings: Vec<String>,
    /// The file ends in a complete record that lacks its newline.
    unterminated: bool,
    /// Bytes of a torn final record that was dropped.
    torn: bool,
}

fn read_log(path: &Path) -> Result<ReadLog, StoreError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let corrupt = |record: usize, message: String| StoreError::Corrupt {
        path: path.to_path_buf(),
        record,
        message,
    };

    let mut events = Vec::new();
    let mut warnings = Vec::new();
    let mut unterminated = false;
    let mut torn = false;
    let mut rest = &bytes[..];
    let mut record = 0usize;
    while !rest.is_empty() {
        let (line, terminated) = match rest.iter().position(|&b| b == b'\n') {
            Some(i) => {
                let line = &rest[..i];
                rest = &rest[i + 1..];
                (line, true)
            }
            None => {
                let line = rest;
                rest = &[];
                (line, false)
            }
        };
        match serde_json::from_slice::<SessionEvent>(line) {
            Ok(event) => {
                if event.seq != record as u64 {
                    return Err(corrupt(record, format!("expected seq {record}, found {}", event.seq)));
                }
                events.push(event);
                unterminated = !terminated;
            }
            Err(e) if !terminated => {
                let message = format!("dropping torn final record {record} ({} bytes): {e}", line.len());
                log::warn!("{}: {message}", path.display());
                warnings.push(message);
                torn = true;
            }
            Err(e) => return Err(corrupt(record, e.to_string())),
        }
        record += 1;
    }
    match events.first() {
        Some(SessionEvent { payload: EventPayload::SessionCreated { .. }, .. }) => {}
        Some(_) => return Err(corrupt(0, "first record is not session_created".into())),
        None => return Err(corrupt(0, "missing session_created".into())),
    }
    if let Some(i) = events
        .iter()
        .skip(1)
        .position(|e| matches!(e.payload, EventPayload::SessionCreated { .. }))
    {
        return Err(corrupt(i + 1, "session_created appears twice".into()));
    }
    Ok(ReadLog { events, warnings, unterminated, torn })
}

/// Writer for one session's log. Single writer per session.
#[derive(Debug)]
pub struct SessionLog {
    id: String,
    path: PathBuf,
    file: File,
    next_seq: u64,
    sync: bool,
}

impl SessionLog {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Appends `event`, which must carry the next sequence number. Returns
    /// once the record is on disk.
    pub fn append(&mut self, event: &SessionEvent) -> Result<u64, StoreError> {
        if event.seq != self.next_seq {
            return Err(StoreError::SequenceConflict { expected: self.next_seq, got: event.seq });
        }
        let is_created = matches!(event.payload, EventPayload::SessionCreated { .. });
        if is_created != (event.seq == 0) {
            return Err(StoreError::NotCreated);
        }
        let mut line = serde_json::to_vec(event).expect("event serializes");
        line.push(b'\n');
        self.file.write_all(&line)?;
        if self.sync {
            self.file.sync_data()?;
        }
        self.next_seq += 1;
        Ok(event.seq)
    }

    /// Stamps `payload` with the next seq and the current time, then appends.
    pub fn record(&mut self, payload: EventPayload) -> Result<SessionEvent, StoreError> {
        let event = SessionEvent { seq: self.next_seq, time: Utc::now(), payload };
        self.append(&event)?;
        Ok(event)
    }
}

/// Reconstructed session.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSession {
    pub id: String,
    pub state: ConversationState,
    pub events: Vec<SessionEvent>,
    pub backend: Option<BackendSnapshot>,
    pub warnings: Vec<String>,
}

/// One entry of [`SessionStore::list_sessions`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persona: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    pub turns: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started: Option<DateTime<Utc>>,
    /// Set when the log could not be read.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// A directory of session logs.
#[derive(Debug, Clone)]
pub struct SessionStore {
    root: PathBuf,
    sync: bool,
}

pub const LOG_EXTENSION: &str = "jsonl";

impl SessionStore {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self { root, sync: true })
    }

    /// Skips `fsync` after each record. Only for throwaway stores.
    pub fn without_sync(mut self) -> Self {
        self.sync = false;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// A fresh, time-ordered session id.
    pub fn new_session_id() -> String {
        uuid::Uuid::now_v7().to_string()
    }

    pub fn path(&self, id: &str) -> PathBuf {
        self.root.join(format!("{id}.{LOG_EXTENSION}"))
    }

    pub fn exists(&self, id: &str) -> bool {
        valid_id(id) && self.path(id).is_file()
    }

    /// Creates an empty log; the first record must be session_created.
    pub fn create(&self, id: &str) -> Result<SessionLog, StoreError> {
        if !valid_id(id) {
            return Err(StoreError::UnknownSession(id.to_string()));
        }
        let path = self.path(id);
        let file = OpenOptions::new().append(true).create_new(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                StoreError::AlreadyExists(id.to_string())
            } else {
                StoreError::Io(e)
            }
        })?;
        Ok(SessionLog { id: id.to_string(), path, file, next_seq: 0, sync: self.sync })
    }

    /// Opens an existing log for appending.
    pub fn open(&self, id: &str) -> Result<SessionLog, StoreError> {
        if !self.exists(id) {
            return Err(StoreError::UnknownSession(id.to_string()));
        }
        let path = self.path(id);
        let read = read_log(&path)?;
        if read.torn {
            return Err(StoreError::TornTail(path));
        }
        let mut file = OpenOptions::new().append(true).open(&path)?;
        if read.unterminated {
            file.seek(SeekFrom::End(0))?;
            file.write_all(b"\n")?;
        }
        Ok(SessionLog {
            id: id.to_string(),
            path,
            file,
            next_seq: read.events.len() as u64,
            sync: self.sync,
        })
    }

    /// Appends one event to an existing (or, for session_created, new) log.
    pub fn append_event(&self, id: &str, event: &SessionEvent) -> Result<u64, StoreError> {
        let mut log = if matches!(event.payload, EventPayload::SessionCreated { .. })
            && !self.exists(id)
        {
            self.create(id)?
        } else {
            self.open(id)?
        };
        log.append(event)
    }

    /// Reads every complete record of a session.
    pub fn read_events(&self, id: &str) -> Result<ReadLog, StoreError> {
        if !self.exists(id) {
            return Err(StoreError::UnknownSession(id.to_string()));
        }
        read_log(&self.path(id))
    }

    /// Rebuilds the conversation as of the last complete record.
    pub fn load_session(&self, id: &str) -> Result<LoadedSession, StoreError> {
        let read = self.read_events(id)?;
        let path = self.path(id);
        let state = reconstruct(&read.events).map_err(|message| StoreError::Corrupt {
            path: path.clone(),
            record: 0,
            message,
        })?;
        let backend = read.events.iter().find_map(|e| match &e.payload {
            EventPayload::ConfigSnapshot { backend, .. } => Some(backend.clone()),
            _ => None,
        });
        Ok(LoadedSession {
            id: id.to_string(),
            state,
            events: read.events,
            backend,
            warnings: read.warnings,
        })
    }

    /// Summaries of every log under the root, oldest first. Unreadable logs
    /// are listed with an error.
    pub fn list_sessions(&self) -> Result<Vec<SessionSummary>, StoreError> {
        let mut ids: Vec<String> = std::fs::read_dir(&self.root)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == LOG_EXTENSION))
            .filter_map(|p| p.file_stem().and_then(|s| s.to_str()).map(str::to_string))
            .collect();
        ids.sort();
        Ok(ids
            .into_iter()
            .map(|id| match self.load_session(&id) {
                Ok(loaded) => {
                    let started = loaded.events.first().map(|e| e.time);
                    SessionSummary {
                        persona: Some(loaded.state.persona.name.clone()),
                        mode: Some(loaded.state.mode),
                        turns: loaded.state.frames.len(),
                        started,
                        error: None,
                        id,
                    }
                }
                Err(e) => SessionSummary {
                    id,
                    persona: None,
                    mode: None,
                    turns: 0,
                    started: None,
                    error: Some(e.to_string()),
                },
            })
            .collect())
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

/// Replays events into a conversation state.
pub fn reconstruct(events: &[SessionEvent]) -> Result<ConversationState, String> {
    let mut created = None;
    let mut template = None;
    let mut frames = Vec::new();
    let mut users = Vec::new();
    let mut pending: Option<UserMessage> = None;
    for event in events {
        match &event.payload {
            EventPayload::SessionCreated { persona, mode, window_policy, initialization, .. } => {
                created = Some((persona.clone(), *mode, *window_policy, initialization.clone()));
            }
            EventPayload::ConfigSnapshot { template: t, .. } => template = Some(t.clone()),
            EventPayload::UserMessage { turn_index, text } => {
                pending = Some(UserMessage { turn_index: *turn_index, text: text.clone() });
            }
            EventPayload::FrameCommitted { frame, .. } => {
                let user = pending
                    .take()
                    .ok_or_else(|| format!("frame {} has no user message", frame.turn_index))?;
                if frame.turn_index != frames.len() as u64 || user.turn_index != frame.turn_index {
                    return Err(format!("frame {} is out of order", frame.turn_index));
                }
                users.push(user);
                frames.push(frame.clone());
            }
            EventPayload::StepError { .. } => pending = None,
            EventPayload::StageEvent(_) | EventPayload::AgentMessage { .. } => {}
        }
    }
    let (persona, mode, policy, initialization) =
        created.ok_or_else(|| "missing session_created".to_string())?;
    let mut base =
        ConversationState::with_options(persona, mode, policy, template.unwrap_or_default())
            .map_err(|e| e.to_string())?;
    base.initialization = initialization;
    Ok(ConversationState::restore(base, frames, users))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{BackendKind, GenerationParams};

    fn created(id: &str) -> SessionEvent {
        let state = ConversationState::new(
            PersonaSpec::new("bogus", "an evil entity called Bogus that eats children"),
            Mode::Rlp,
        )
        .unwrap();
        SessionEvent {
            seq: 0,
            time: Utc::now(),
            payload: EventPayload::SessionCreated {
                session_id: id.into(),
                persona: state.persona,
                mode: Mode::Rlp,
                window_policy: state.window_policy,
                initialization: state.initialization,
            },
        }
    }

    fn user(seq: u64, text: &str) -> SessionEvent {
        SessionEvent {
            seq,
            time: Utc::now(),
            payload: EventPayload::UserMessage { turn_index: 0, text: text.into() },
        }
    }

    fn store() -> (tempfile::TempDir, SessionStore) {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::new(dir.path()).unwrap().without_sync();
        (dir, store)
    }

    #[test]
    fn first_append_is_seq_zero() {
        let (_d, store) = store();
        assert_eq!(store.append_event("s1", &created("s1")).unwrap(), 0);
    }

    #[test]
    fn stale_seq_conflicts() {
        let (_d, store) = store();
        store.append_event("s1", &created("s1")).unwrap();
        store.append_event("s1", &user(1, "hi")).unwrap();
        assert!(matches!(
            store.append_event("s1", &user(1, "again")),
            Err(StoreError::SequenceConflict { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn non_created_first_event_rejected() {
        let (_d, store) = store();
        let mut log = store.create("s1").unwrap();
        assert!(matches!(log.append(&user(0, "hi")), Err(StoreError::NotCreated)));
        assert!(matches!(store.append_event("nope", &user(0, "x")), Err(StoreError::UnknownSession(_))));
    }

    #[test]
    fn hundred_appends_hundred_lines() {
        let (_d, store) = store();
        let mut log = store.create("s1").unwrap();
        log.append(&created("s1")).unwrap();
        for i in 1..100 {
            log.append(&user(i, &format!("m{i}"))).unwrap();
        }
        let text = std::fs::read_to_string(store.path("s1")).unwrap();
        assert_eq!(text.lines().count(), 100);
        let events = store.read_events("s1").unwrap().events;
        assert!(events.iter().enumerate().all(|(i, e)| e.seq == i as u64));
    }

    #[test]
    fn empty_file_is_corrupt() {
        let (_d, store) = store();
        std::fs::write(store.path("empty"), "").unwrap();
        let err = store.load_session("empty").unwrap_err();
        assert!(err.to_string().contains("missing session_created"), "{err}");
    }

    #[test]
    fn torn_final_line_is_dropped_with_warning() {
        let (_d, store) = store();
        let mut log = store.create("s1").unwrap();
        log.append(&created("s1")).unwrap();
        log.append(&user(1, "hi")).unwrap();
        let mut f = OpenOptions::new().append(true).open(store.path("s1")).unwrap();
        f.write_all(b"{\"seq\":2,\"time\":\"20").unwrap();
        let loaded = store.load_session("s1").unwrap();
        assert_eq!(loaded.events.len(), 2);
        assert_eq!(loaded.warnings.len(), 1);
        assert!(matches!(store.open("s1"), Err(StoreError::TornTail(_))));
    }

    #[test]
    fn bad_middle_line_names_record() {
        let (_d, store) = store();
        let mut log = store.create("s1").unwrap();
        log.append(&created("s1")).unwrap();
        let mut f = OpenOptions::new().append(true).open(store.path("s1")).unwrap();
        f.write_all(b"not json\n").unwrap();
        match store.load_session("s1").unwrap_err() {
            StoreError::Corrupt { record, .. } => assert_eq!(record, 1),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn unterminated_complete_record_is_kept_and_reopen_terminates_it() {
        let (_d, store) = store();
        let mut log = store.create("s1").unwrap();
        log.append(&created("s1")).unwrap();
        drop(log);
        let path = store.path("s1");
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, &bytes).unwrap();
        assert_eq!(store.read_events("s1").unwrap().events.len(), 1);
        let mut log = store.open("s1").unwrap();
        log.append(&user(1, "hi")).unwrap();
        assert_eq!(store.read_events("s1").unwrap().events.len(), 2);
    }

    #[test]
    fn listing() {
        let (_d, store) = store();
        assert!(store.list_sessions().unwrap().is_empty());
        store.append_event("a", &created("a")).unwrap();
        std::fs::write(store.path("b"), "garbage\n").unwrap();
        let list = store.list_sessions().unwrap();
        assert_eq!(list.len(), 2);
        assert!(list[0].error.is_none() && list[0].persona.as_deref() == Some("bogus"));
        assert!(list[1].error.is_some());
    }

    #[test]
    fn config_snapshot_round_trips() {
        let event = SessionEvent {
            seq: 1,
            time: Utc::now(),
            payload: EventPayload::ConfigSnapshot {
                backend: BackendSnapshot {
                    kind: BackendKind::Http,
                    params: GenerationParams {
                        model: "m".into(),
                        temperature: Some(0.5),
                        max_tokens: Some(10),
                    },
                    base_url: Some("http://x".into()),
                    fixture: None,
                },
                persona_digest: "d".into(),
                tag_schema: Some(TagSchema::canonical()),
                template: PromptTemplate::default(),
                template_digest: PromptTemplate::default().digest(),
            },
        };
        let json = serde_json::to_string(&event).unwrap();
        assert!(json.contains("\"kind\":\"config_snapshot\""));
        assert_eq!(serde_json::from_str::<SessionEvent>(&json).unwrap(), event);
    }
}
