use rlp_core::store::SessionEvent;
use serde::{Deserialize, Serialize};

/// What a stream subscriber receives: stored records, each carrying its
/// `seq`, interleaved with transient notices that are never persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
#[allow(clippy::large_enum_variant)]
pub enum WireEvent {
    Record(SessionEvent),
    Transient(Transient),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transient {
    /// Outbound message text as it is generated. The tokens of the last
    /// attempt of a turn concatenate to its `agent_message`.
    MessageToken { turn_index: u64, attempt: u32, text: String },
    /// Tokens already sent for this attempt are void.
    AttemptFailed { turn_index: u64, attempt: u32, error: String },
    /// The backlog has been sent; what follows is live.
    CaughtUp { next_seq: u64 },
    /// The subscriber fell behind and is being disconnected.
    Lagged { missed: u64 },
}

impl WireEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            WireEvent::Record(e) => e.payload.kind(),
            WireEvent::Transient(Transient::MessageToken { .. }) => "message_token",
            WireEvent::Transient(Transient::AttemptFailed { .. }) => "attempt_failed",
            WireEvent::Transient(Transient::CaughtUp { .. }) => "caught_up",
            WireEvent::Transient(Transient::Lagged { .. }) => "lagged",
        }
    }

    pub fn seq(&self) -> Option<u64> {
        match self {
            WireEvent::Record(e) => Some(e.seq),
            WireEvent::Transient(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_shapes_round_trip() {
        let events = [
            WireEvent::Record(
                serde_json::from_str(
                    r#"{"seq":3,"time":"2026-01-01T00:00:00Z","kind":"agent_message","turn_index":0,"text":"hi"}"#,
                )
                .unwrap(),
            ),
            WireEvent::Transient(Transient::MessageToken { turn_index: 0, attempt: 1, text: "h".into() }),
            WireEvent::Transient(Transient::CaughtUp { next_seq: 4 }),
        ];
        for e in events {
            let json = serde_json::to_string(&e).unwrap();
            assert!(json.contains(&format!("\"kind\":\"{}\"", e.kind())), "{json}");
            assert_eq!(serde_json::from_str::<WireEvent>(&json).unwrap(), e);
        }
    }
}
