//! Re-executes a recorded session against its recorded completions.
//!
//! Every generation attempt is logged with the digest of the prompt that
//! produced it, so a replay can serve the same completions back and detect
//! any change in how prompts are rendered.

use thiserror::Error;

use crate::backends::{BackendError, Fixture, FixtureEntry, ScriptedBackend};
use crate::cognition::{CognitiveFrame, GenerationRecord, StepError};
use crate::prompt::PromptTemplate;
use crate::store::{reconstruct, EventPayload, LoadedSession, SessionEvent};

#[derive(Debug, Clone, Default)]
pub struct ReplayOptions {
    /// Check each prompt against its recorded digest.
    pub verify_digests: bool,
    /// Render with this template instead of the recorded one.
    pub template: Option<PromptTemplate>,
    /// Serve these completions instead of the recorded ones.
    pub fixture: Option<Fixture>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplayVerdict {
    Identical,
    Drift { turn: u64, detail: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub turns_replayed: usize,
    pub verdict: ReplayVerdict,
    pub recorded_ledger: String,
    pub replayed_ledger: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplayError {
    #[error("turn {0} has no recorded completion to replay")]
    MissingFixture(u64),
    #[error("cannot rebuild session: {0}")]
    Corrupt(String),
}

/// A recorded turn: what the user said and what each attempt received.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedTurn {
    pub turn_index: u64,
    pub text: String,
    pub committed: bool,
    pub attempts: Vec<GenerationRecord>,
}

pub fn recorded_turns(events: &[SessionEvent]) -> Vec<RecordedTurn> {
    let mut turns: Vec<RecordedTurn> = Vec::new();
    for event in events {
        match &event.payload {
            EventPayload::UserMessage { turn_index, text } => turns.push(RecordedTurn {
                turn_index: *turn_index,
                text: text.clone(),
                committed: false,
                attempts: Vec::new(),
            }),
            EventPayload::FrameCommitted { attempts, .. } => {
                if let Some(t) = turns.last_mut() {
                    t.committed = true;
                    t.attempts = attempts.clone();
                }
            }
            EventPayload::StepError { attempts, .. } => {
                if let Some(t) = turns.last_mut() {
                    t.attempts = attempts.clone();
                }
            }
            _ => {}
        }
    }
    turns
}

/// Turns whose every attempt produced a completion; the others (transport
/// failures, crashes mid-turn) cannot be re-executed.
fn replayable(turn: &RecordedTurn) -> bool {
    !turn.attempts.is_empty() && turn.attempts.iter().all(|a| a.completion.is_some())
}

/// Builds a fixture from the recorded completions of replayable turns.
pub fn recorded_fixture(events: &[SessionEvent], with_digests: bool) -> Fixture {
    let completions = recorded_turns(events)
        .iter()
        .filter(|t| replayable(t))
        .flat_map(|t| t.attempts.iter())
        .map(|a| FixtureEntry {
            text: a.completion.clone().unwrap_or_default(),
            prompt_digest: with_digests.then(|| a.prompt_digest.clone()),
        })
        .collect();
    Fixture { completions }
}

/// Canonical byte form of a frame ledger.
pub fn ledger_bytes(frames: &[CognitiveFrame]) -> String {
    serde_json::to_string(frames).expect("frames serialize")
}

pub fn replay(loaded: &LoadedSession, options: &ReplayOptions) -> Result<ReplayReport, ReplayError> {
    let setup: Vec<SessionEvent> = loaded
        .events
        .iter()
        .filter(|e| {
            matches!(e.payload, EventPayload::SessionCreated { .. } | EventPayload::ConfigSnapshot { .. })
        })
        .cloned()
        .collect();
    let mut state = reconstruct(&setup).map_err(ReplayError::Corrupt)?;
    if let Some(template) = &options.template {
        state.template = template.clone();
    }

    let turns = recorded_turns(&loaded.events);
    if let Some(t) = turns.iter().find(|t| t.committed && !replayable(t)) {
        return Err(ReplayError::MissingFixture(t.turn_index));
    }
    let fixture = match &options.fixture {
        Some(f) if options.verify_digests => f.clone(),
        Some(f) => f.clone().without_digests(),
        None => recorded_fixture(&loaded.events, options.verify_digests),
    };
    let mut backend = ScriptedBackend::new(fixture);

    let recorded_ledger = ledger_bytes(&loaded.state.frames);
    let mut replayed = 0;
    let mut drift = None;
    for turn in turns.iter().filter(|t| replayable(t)) {
        replayed += 1;
        let result = state.step(&turn.text, &mut backend);
        let turn_index = turn.turn_index;
        match (result, turn.committed) {
            (Ok(_), true) => {}
            (Err(f), false) if !matches!(f.error, StepError::Backend(_)) => {}
            (Err(f), _) => {
                let detail = match &f.error {
                    StepError::Backend(BackendError::DigestMismatch { .. }) => {
                        format!("prompt digest mismatch: {}", f.error)
                    }
                    other => other.to_string(),
                };
                drift = Some(ReplayVerdict::Drift { turn: turn_index, detail });
                break;
            }
            (Ok(_), false) => {
                drift = Some(ReplayVerdict::Drift {
                    turn: turn_index,
                    detail: "turn failed when recorded but succeeded on replay".into(),
                });
                break;
            }
        }
    }

    let replayed_ledger = ledger_bytes(&state.frames);
    let verdict = match drift {
        Some(d) => d,
        None if replayed_ledger == recorded_ledger => ReplayVerdict::Identical,
        None => {
            let turn = state
                .frames
                .iter()
                .zip(&loaded.state.frames)
                .position(|(a, b)| a != b)
                .unwrap_or(state.frames.len().min(loaded.state.frames.len()));
            ReplayVerdict::Drift { turn: turn as u64, detail: "frame ledger differs".into() }
        }
    };
    Ok(ReplayReport { turns_replayed: replayed, verdict, recorded_ledger, replayed_ledger })
}
