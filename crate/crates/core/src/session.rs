//! A conversation bound to a backend and, optionally, a session log.
//!
//! Each turn is recorded as `user_message`, then either the stage events,
//! `frame_committed` and `agent_message`, or a single `step_error`.

use thiserror::Error;

use crate::backends::Backend;
use crate::cognition::{
    CognitionError, ConversationState, StepError, StepFailure, StepOutcome, StepUpdate,
};
use crate::store::{EventPayload, LoadedSession, SessionEvent, SessionLog, StoreError};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Step(#[from] StepFailure),
}

/// Something a caller may want to show or forward while a turn runs.
#[derive(Debug, Clone, Copy)]
pub enum SessionUpdate<'a> {
    /// A record, already durable if the session is logged.
    Event(&'a SessionEvent),
    /// Transient outbound-message text; not persisted.
    Token { attempt: u32, text: &'a str },
    /// An attempt was abandoned; tokens streamed for it are void.
    AttemptFailed { attempt: u32, error: &'a str },
}

pub struct Session<B> {
    id: String,
    state: ConversationState,
    backend: B,
    log: Option<SessionLog>,
    events: Vec<SessionEvent>,
}

impl<B: Backend> Session<B> {
    /// Starts a session, recording `session_created` and `config_snapshot`.
    pub fn start(
        id: impl Into<String>,
        state: ConversationState,
        backend: B,
        log: Option<SessionLog>,
    ) -> Result<Self, SessionError> {
        let id = id.into();
        let created = EventPayload::SessionCreated {
            session_id: id.clone(),
            persona: state.persona.clone(),
            mode: state.mode,
            window_policy: state.window_policy,
            initialization: state.initialization.clone(),
        };
        let config = EventPayload::ConfigSnapshot {
            backend: backend.snapshot(),
            persona_digest: state.persona.digest(),
            tag_schema: state.schema.clone(),
            template: state.template.clone(),
            template_digest: state.template.digest(),
        };
        let mut session = Self { id, state, backend, log, events: Vec::new() };
        session.record(created, &mut |_| {})?;
        session.record(config, &mut |_| {})?;
        Ok(session)
    }

    /// Continues a recorded session. New turns are appended to `log`.
    pub fn resume(loaded: LoadedSession, backend: B, log: Option<SessionLog>) -> Self {
        Self { id: loaded.id, state: loaded.state, backend, log, events: loaded.events }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn state(&self) -> &ConversationState {
        &self.state
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn is_recorded(&self) -> bool {
        self.log.is_some()
    }

    fn record(
        &mut self,
        payload: EventPayload,
        on: &mut dyn FnMut(SessionUpdate<'_>),
    ) -> Result<(), StoreError> {
        let event = match &mut self.log {
            Some(log) => log.record(payload)?,
            None => SessionEvent {
                seq: self.events.len() as u64,
                time: chrono::Utc::now(),
                payload,
            },
        };
        self.events.push(event);
        on(SessionUpdate::Event(self.events.last().expect("just pushed")));
        Ok(())
    }

    pub fn send(&mut self, text: &str) -> Result<StepOutcome, SessionError> {
        self.send_with(text, &mut |_| {})
    }

    /// Runs one turn for `text`, recording and reporting its events.
    pub fn send_with(
        &mut self,
        text: &str,
        on: &mut dyn FnMut(SessionUpdate<'_>),
    ) -> Result<StepOutcome, SessionError> {
        let turn_index = self.state.next_turn();
        if text.trim().is_empty() {
            return Err(SessionError::Step(StepFailure {
                turn_index,
                error: StepError::Invalid(CognitionError::EmptyMessage),
                attempts: Vec::new(),
            }));
        }
        self.record(EventPayload::UserMessage { turn_index, text: text.to_string() }, on)?;

        let result = self.state.step_with(text, &mut self.backend, &mut |update| match &update {
            StepUpdate::MessageToken { attempt, text } => {
                on(SessionUpdate::Token { attempt: *attempt, text })
            }
            StepUpdate::AttemptFailed { attempt, error } => {
                on(SessionUpdate::AttemptFailed { attempt: *attempt, error })
            }
        });
        match result {
            Ok(outcome) => {
                for stage in &outcome.frame.stage_log {
                    self.record(EventPayload::StageEvent(stage.clone()), on)?;
                }
                self.record(
                    EventPayload::FrameCommitted {
                        frame: outcome.frame.clone(),
                        attempts: outcome.attempts.clone(),
                    },
                    on,
                )?;
                self.record(
                    EventPayload::AgentMessage { turn_index, text: outcome.outgoing.clone() },
                    on,
                )?;
                Ok(outcome)
            }
            Err(failure) => {
                self.record(
                    EventPayload::StepError {
                        turn_index,
                        error: failure.error.to_string(),
                        attempts: failure.attempts.clone(),
                    },
                    on,
                )?;
                Err(SessionError::Step(failure))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::ScriptedBackend;
    use crate::cognition::Mode;
    use crate::persona::PersonaSpec;
    use crate::store::SessionStore;

    const REPLY: &str = "<FEELING>f</FEELING><THOUGHT>t</THOUGHT><MESSAGE>m</MESSAGE>\
<ANALYSIS>a</ANALYSIS><PLAN>p</PLAN>";

    fn state() -> ConversationState {
        ConversationState::new(PersonaSpec::new("bogus", "an evil entity"), Mode::Rlp).unwrap()
    }

    #[test]
    fn turn_records_expected_kinds() {
        let mut s = Session::start("x", state(), ScriptedBackend::from_texts([REPLY]), None).unwrap();
        s.send("hi").unwrap();
        let kinds: Vec<&str> = s.events().iter().map(|e| e.payload.kind()).collect();
        assert_eq!(
            kinds,
            [
                "session_created",
                "config_snapshot",
                "user_message",
                "stage_event",
                "stage_event",
                "stage_event",
                "stage_event",
                "stage_event",
                "stage_event",
                "frame_committed",
                "agent_message"
            ]
        );
    }

    #[test]
    fn failures_record_step_error_and_keep_state() {
        let mut s = Session::start("x", state(), ScriptedBackend::from_texts(["a", "b"]), None).unwrap();
        let err = s.send("hi").unwrap_err();
        assert!(matches!(err, SessionError::Step(_)));
        assert_eq!(s.events().last().unwrap().payload.kind(), "step_error");
        assert!(s.state().frames.is_empty());
        assert!(matches!(s.send("  "), Err(SessionError::Step(_))));
    }

    #[test]
    fn logged_session_reloads_equal() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::new(dir.path()).unwrap().without_sync();
        let log = store.create("abc").unwrap();
        let backend = ScriptedBackend::from_texts([REPLY, "junk", "junk", REPLY]);
        let mut s = Session::start("abc", state(), backend, Some(log)).unwrap();
        s.send("one").unwrap();
        s.send("two").unwrap_err();
        s.send("three").unwrap();
        let loaded = store.load_session("abc").unwrap();
        assert_eq!(&loaded.state, s.state());
        assert_eq!(loaded.events, s.events());
    }
}
