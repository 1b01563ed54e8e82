//! The per-message cognitive cycle.
//!
//! Every inbound message runs one cycle: the prompt is assembled from the
//! persona, the recalled internal monologue and the visible chat, a single
//! completion is requested, and its tagged sections become a
//! [`CognitiveFrame`]. Sections map onto stages as follows:
//!
//! | stage             | source                                   |
//! |-------------------|------------------------------------------|
//! | introspection     | feeling section                          |
//! | recall            | recall block, at prompt assembly         |
//! | deliberation      | thought section                          |
//! | message formation | message section (the outbound utterance) |
//! | retrospection     | analysis section                         |
//! | planning          | plan section                             |
//!
//! Stage events are stamped with a logical clock owned by the conversation,
//! so replays produce byte-identical ledgers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{Backend, BackendError, GenerationRequest};
use crate::persona::{validate_persona, PersonaSpec, Violation};
use crate::prompt::{fill, PromptDocument, PromptTemplate, Role, SectionKind};
use crate::tagparse::{
    parse_frame, serialize_frame, FrameFields, FrameParser, ParseError, ParseEvent, SchemaError,
    Section, TagSchema,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Rlp,
    Baseline,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rlp" => Ok(Mode::Rlp),
            "baseline" => Ok(Mode::Baseline),
            other => Err(format!("unknown mode `{other}` (expected rlp or baseline)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Initialization,
    Introspection,
    Recall,
    Deliberation,
    MessageFormation,
    Retrospection,
    Planning,
}

impl Stage {
    /// Stages of one cycle, in order.
    pub const CYCLE: [Stage; 6] = [
        Stage::Introspection,
        Stage::Recall,
        Stage::Deliberation,
        Stage::MessageFormation,
        Stage::Retrospection,
        Stage::Planning,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEvent {
    pub stage: Stage,
    pub turn_index: u64,
    /// Logical, strictly increasing within a conversation.
    pub tick: u64,
}

/// One turn's parsed internal dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CognitiveFrame {
    pub turn_index: u64,
    pub feeling: String,
    pub thought: String,
    pub message: String,
    pub analysis: String,
    pub plan: String,
    /// Verbatim model output.
    pub raw: String,
    pub stage_log: Vec<StageEvent>,
}

impl CognitiveFrame {
    pub fn fields(&self) -> FrameFields {
        FrameFields {
            feeling: self.feeling.clone(),
            thought: self.thought.clone(),
            message: self.message.clone(),
            analysis: self.analysis.clone(),
            plan: self.plan.clone(),
        }
    }

    pub fn stages(&self) -> Vec<Stage> {
        self.stage_log.iter().map(|e| e.stage).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserMessage {
    pub turn_index: u64,
    pub text: String,
}

/// Which past frames the prompt may see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPolicy {
    pub max_frames: usize,
    pub always_keep_first: bool,
}

impl Default for WindowPolicy {
    fn default() -> Self {
        Self { max_frames: 8, always_keep_first: true }
    }
}

impl WindowPolicy {
    pub fn new(max_frames: usize, always_keep_first: bool) -> Result<Self, CognitionError> {
        if max_frames == 0 {
            return Err(CognitionError::InvalidWindow);
        }
        Ok(Self { max_frames, always_keep_first })
    }

    /// Frame indices visible under this policy for a ledger of `len` frames.
    pub fn window(&self, len: usize) -> Vec<usize> {
        let max = self.max_frames.max(1);
        if len <= max {
            return (0..len).collect();
        }
        if self.always_keep_first && max > 1 {
            std::iter::once(0).chain(len - (max - 1)..len).collect()
        } else {
            (len - max..len).collect()
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CognitionError {
    #[error("invalid persona: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", "))]
    InvalidPersona(Vec<Violation>),
    #[error("invalid tag schema: {0}")]
    Schema(#[from] SchemaError),
    #[error("incoming message is empty")]
    EmptyMessage,
    #[error("window max_frames must be at least 1")]
    InvalidWindow,
    #[error("frame {turn} cannot be recalled: {message}")]
    Recall { turn: u64, message: String },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StepError {
    #[error(transparent)]
    Invalid(#[from] CognitionError),
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("unreadable completion after retry: {0}")]
    Parse(ParseError),
    #[error("completion contained no message")]
    EmptyReply,
    #[error("prompt needs ~{needed} tokens but the backend allows {limit}")]
    BudgetExceeded { needed: usize, limit: usize },
}

/// What one generation attempt asked for and got back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub prompt_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub frame: CognitiveFrame,
    pub outgoing: String,
    pub attempts: Vec<GenerationRecord>,
}

/// A failed step. The conversation is left as it was.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("turn {turn_index}: {error}")]
pub struct StepFailure {
    pub turn_index: u64,
    pub error: StepError,
    pub attempts: Vec<GenerationRecord>,
}

impl StepFailure {
    /// Raw text of the last completion received, if any.
    pub fn raw(&self) -> Option<&str> {
        self.attempts.iter().rev().find_map(|a| a.completion.as_deref())
    }
}

/// Progress reported while a step runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepUpdate {
    /// Incremental outbound message text. Concatenating the tokens of the
    /// final attempt yields the committed message.
    MessageToken { attempt: u32, text: String },
    AttemptFailed { attempt: u32, error: String },
}

/// A conversation: persona, committed turns and the frame ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationState {
    pub persona: PersonaSpec,
    pub mode: Mode,
    /// Absent in baseline mode.
    pub schema: Option<TagSchema>,
    pub template: PromptTemplate,
    pub window_policy: WindowPolicy,
    pub initialization: StageEvent,
    pub frames: Vec<CognitiveFrame>,
    pub user_messages: Vec<UserMessage>,
    pub window: Vec<usize>,
    clock: u64,
}

impl ConversationState {
    pub fn new(persona: PersonaSpec, mode: Mode) -> Result<Self, CognitionError> {
        Self::with_options(persona, mode, WindowPolicy::default(), PromptTemplate::default())
    }

    pub fn with_options(
        persona: PersonaSpec,
        mode: Mode,
        window_policy: WindowPolicy,
        template: PromptTemplate,
    ) -> Result<Self, CognitionError> {
        let violations = validate_persona(&persona);
        if !violations.is_empty() {
            return Err(CognitionError::InvalidPersona(violations));
        }
        if window_policy.max_frames == 0 {
            return Err(CognitionError::InvalidWindow);
        }
        let schema = match mode {
            Mode::Rlp => Some(persona.tag_schema()?),
            Mode::Baseline => None,
        };
        Ok(Self {
            persona,
            mode,
            schema,
            template,
            window_policy,
            initialization: StageEvent { stage: Stage::Initialization, turn_index: 0, tick: 0 },
            frames: Vec::new(),
            user_messages: Vec::new(),
            window: Vec::new(),
            clock: 1,
        })
    }

    /// Rebuilds a conversation from recorded parts; used by the store.
    pub(crate) fn restore(
        mut base: ConversationState,
        frames: Vec<CognitiveFrame>,
        user_messages: Vec<UserMessage>,
    ) -> Self {
        let last_tick = frames
            .iter()
            .flat_map(|f| f.stage_log.iter().map(|e| e.tick))
            .max()
            .unwrap_or(base.initialization.tick);
        base.clock = last_tick + 1;
        base.frames = frames;
        base.user_messages = user_messages;
        base.compact();
        base
    }

    pub fn next_turn(&self) -> u64 {
        self.frames.len() as u64
    }

    /// Frames currently visible to the prompt.
    pub fn working_window(&self) -> impl Iterator<Item = &CognitiveFrame> {
        self.window.iter().map(|&i| &self.frames[i])
    }

    /// Returns a copy whose working window obeys the window policy. The
    /// frame ledger itself is never truncated.
    pub fn compact_history(&self) -> Self {
        let mut out = self.clone();
        out.compact();
        out
    }

    pub fn compact(&mut self) {
        self.window = self.window_policy.window(self.frames.len());
    }

    /// Assembles the prompt for `incoming`. Pure.
    pub fn render_prompt(&self, incoming: &str) -> Result<PromptDocument, CognitionError> {
        self.render_with_window(incoming, &self.window)
    }

    fn render_with_window(
        &self,
        incoming: &str,
        window: &[usize],
    ) -> Result<PromptDocument, CognitionError> {
        if incoming.trim().is_empty() {
            return Err(CognitionError::EmptyMessage);
        }
        let name = self.persona.display();
        let vars = [("name", name), ("personality", self.persona.personality.as_str())];
        let mut doc = PromptDocument::default();

        match (&self.schema, self.mode) {
            (Some(schema), Mode::Rlp) => {
                let mut header = fill(&self.template.header, &vars, Some(schema));
                if let Some(plan) = &self.persona.initial_plan {
                    header.push_str("\n\n");
                    header.push_str(&fill(
                        &self.template.initial_plan,
                        &[("name", name), ("plan", plan.as_str())],
                        Some(schema),
                    ));
                }
                doc.push(SectionKind::PersonaHeader, Role::System, header);
                if !window.is_empty() {
                    let mut recall = fill(&self.template.recall_preamble, &vars, Some(schema));
                    for &i in window {
                        let frame = &self.frames[i];
                        let body = serialize_frame(&frame.fields(), schema).map_err(|e| {
                            CognitionError::Recall { turn: frame.turn_index, message: e.to_string() }
                        })?;
                        recall.push_str(&format!("\n\n[turn {}]\n{body}", frame.turn_index));
                    }
                    doc.push(SectionKind::Recall, Role::System, recall);
                }
            }
            _ => {
                doc.push(
                    SectionKind::PersonaHeader,
                    Role::System,
                    fill(&self.template.baseline_header, &vars, None),
                );
            }
        }

        for (user, frame) in self.user_messages.iter().zip(&self.frames) {
            doc.push(SectionKind::Utterance, Role::User, user.text.clone());
            doc.push(SectionKind::Utterance, Role::Agent, frame.message.clone());
        }
        doc.push(SectionKind::Incoming, Role::User, incoming);
        if let (Some(schema), Mode::Rlp) = (&self.schema, self.mode) {
            doc.push(
                SectionKind::Instructions,
                Role::System,
                fill(&self.template.instructions, &vars, Some(schema)),
            );
        }
        Ok(doc)
    }

    /// Renders the prompt, shedding the oldest recalled frames if the
    /// backend's context limit requires it.
    fn render_within_budget(
        &self,
        incoming: &str,
        limit: Option<usize>,
    ) -> Result<PromptDocument, StepError> {
        let mut window = self.window.clone();
        loop {
            let doc = self.render_with_window(incoming, &window)?;
            let Some(limit) = limit else { return Ok(doc) };
            let needed = doc.estimated_tokens();
            if needed <= limit {
                return Ok(doc);
            }
            if window.is_empty() {
                return Err(StepError::BudgetExceeded { needed, limit });
            }
            window.remove(0);
        }
    }

    fn repair_prompt(&self, mut doc: PromptDocument, error: &str) -> PromptDocument {
        let text = fill(&self.template.repair, &[("error", error)], self.schema.as_ref());
        doc.push(SectionKind::Repair, Role::System, text);
        doc
    }

    pub fn step(
        &mut self,
        incoming: &str,
        backend: &mut dyn Backend,
    ) -> Result<StepOutcome, StepFailure> {
        self.step_with(incoming, backend, &mut |_| {})
    }

    /// Runs one cycle for `incoming`: one generation, plus one repair retry
    /// if the completion cannot be parsed. On failure the conversation is
    /// unchanged.
    pub fn step_with(
        &mut self,
        incoming: &str,
        backend: &mut dyn Backend,
        observer: &mut dyn FnMut(StepUpdate),
    ) -> Result<StepOutcome, StepFailure> {
        let turn_index = self.next_turn();
        let mut attempts = Vec::new();
        let fail = |error: StepError, attempts: Vec<GenerationRecord>| StepFailure {
            turn_index,
            error,
            attempts,
        };

        let base = match self.render_within_budget(incoming, backend.context_limit()) {
            Ok(doc) => doc,
            Err(e) => return Err(fail(e, attempts)),
        };
        let mut prompt = base.clone();
        let mut attempt: u32 = 0;
        let fields = loop {
            let req = GenerationRequest { prompt: prompt.clone(), params: backend.params().clone() };
            let digest = prompt.digest();
            let completion = match self.generate_once(backend, &req, attempt, observer) {
                Ok(c) => c,
                Err(e) => {
                    attempts.push(GenerationRecord {
                        prompt_digest: digest,
                        completion: None,
                        error: Some(e.to_string()),
                    });
                    return Err(fail(StepError::Backend(e), attempts));
                }
            };
            let parsed = self.interpret(&completion);
            attempts.push(GenerationRecord {
                prompt_digest: digest,
                completion: Some(completion.clone()),
                error: parsed.as_ref().err().map(|e| e.to_string()),
            });
            match parsed {
                Ok(fields) => break (fields, completion),
                Err(e) if attempt == 0 => {
                    observer(StepUpdate::AttemptFailed { attempt, error: e.to_string() });
                    prompt = self.repair_prompt(base.clone(), &e.to_string());
                    attempt += 1;
                }
                Err(e) => return Err(fail(e, attempts)),
            }
        };
        let (fields, raw) = fields;

        let stages: &[Stage] = match self.mode {
            Mode::Rlp => &Stage::CYCLE,
            Mode::Baseline => &[Stage::MessageFormation],
        };
        let stage_log: Vec<StageEvent> = stages
            .iter()
            .enumerate()
            .map(|(i, &stage)| StageEvent { stage, turn_index, tick: self.clock + i as u64 })
            .collect();
        let frame = CognitiveFrame {
            turn_index,
            feeling: fields.feeling,
            thought: fields.thought,
            message: fields.message,
            analysis: fields.analysis,
            plan: fields.plan,
            raw,
            stage_log,
        };
        self.clock += stages.len() as u64;
        self.user_messages.push(UserMessage { turn_index, text: incoming.to_string() });
        self.frames.push(frame.clone());
        self.compact();
        Ok(StepOutcome { outgoing: frame.message.clone(), frame, attempts })
    }

    fn generate_once(
        &self,
        backend: &mut dyn Backend,
        req: &GenerationRequest,
        attempt: u32,
        observer: &mut dyn FnMut(StepUpdate),
    ) -> Result<String, BackendError> {
        let completion = match &self.schema {
            Some(schema) if self.mode == Mode::Rlp => {
                let mut parser = FrameParser::new(schema.clone());
                backend.generate(req, &mut |chunk| {
                    for event in parser.feed(chunk) {
                        if let ParseEvent::Text(Section::Message, text) = event {
                            observer(StepUpdate::MessageToken { attempt, text });
                        }
                    }
                })?
            }
            _ => backend.generate(req, &mut |chunk| {
                observer(StepUpdate::MessageToken { attempt, text: chunk.to_string() })
            })?,
        };
        Ok(completion.text)
    }

    fn interpret(&self, completion: &str) -> Result<FrameFields, StepError> {
        match (&self.schema, self.mode) {
            (Some(schema), Mode::Rlp) => parse_frame(completion, schema).map_err(StepError::Parse),
            _ => {
                if completion.trim().is_empty() {
                    return Err(StepError::EmptyReply);
                }
                Ok(FrameFields { message: completion.to_string(), ..Default::default() })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::ScriptedBackend;

    fn bogus() -> PersonaSpec {
        PersonaSpec::new("bogus", "an evil entity called Bogus that eats children")
    }

    fn reply(turn: usize) -> String {
        format!(
            "<FEELING>glee {turn}</FEELING><THOUGHT>lure {turn}</THOUGHT>\
<MESSAGE>Hello {turn}, child.</MESSAGE><ANALYSIS>wary {turn}</ANALYSIS><PLAN>plan-{turn}: offer a game</PLAN>"
        )
    }

    fn run(state: &mut ConversationState, n: usize) {
        let mut backend = ScriptedBackend::from_texts((0..n).map(reply));
        for i in 0..n {
            state.step(&format!("user says {i}"), &mut backend).unwrap();
        }
    }

    #[test]
    fn init_rlp() {
        let state = ConversationState::new(bogus(), Mode::Rlp).unwrap();
        assert!(state.frames.is_empty());
        assert_eq!(state.initialization.stage, Stage::Initialization);
        assert_eq!(state.initialization.turn_index, 0);
        assert!(state.schema.is_some());
    }

    #[test]
    fn init_baseline_has_no_tags() {
        let state = ConversationState::new(bogus(), Mode::Baseline).unwrap();
        assert!(state.schema.is_none());
        let text = state.render_prompt("hello").unwrap().full_text();
        for tag in TagSchema::canonical().names() {
            assert!(!text.contains(tag.as_str()), "{tag} in {text}");
        }
        assert!(text.starts_with("You are an evil entity called Bogus that eats children"));
    }

    #[test]
    fn init_invalid_persona() {
        let err = ConversationState::new(PersonaSpec::new("x", ""), Mode::Rlp).unwrap_err();
        assert!(matches!(err, CognitionError::InvalidPersona(v) if v.len() == 1));
    }

    #[test]
    fn first_prompt_has_personality_and_instructions_only() {
        let state = ConversationState::new(bogus(), Mode::Rlp).unwrap();
        let doc = state.render_prompt("hi").unwrap();
        let text = doc.full_text();
        assert!(text.contains("an evil entity called Bogus that eats children"));
        for tag in TagSchema::canonical().names() {
            assert!(text.contains(&format!("<{tag}>")));
        }
        assert!(!doc.has(SectionKind::Recall));
        let kinds: Vec<SectionKind> = doc.sections.iter().map(|s| s.kind).collect();
        assert_eq!(
            kinds,
            [SectionKind::PersonaHeader, SectionKind::Incoming, SectionKind::Instructions]
        );
    }

    #[test]
    fn recall_contains_prior_plans() {
        let mut state = ConversationState::new(bogus(), Mode::Rlp).unwrap();
        run(&mut state, 2);
        let doc = state.render_prompt("third").unwrap();
        let recall = &doc.section(SectionKind::Recall).unwrap().text;
        let f0 = recall.find(&state.frames[0].plan).unwrap();
        let f1 = recall.find(&state.frames[1].plan).unwrap();
        assert!(f0 < f1, "newest last");
    }

    #[test]
    fn empty_incoming_rejected() {
        let state = ConversationState::new(bogus(), Mode::Rlp).unwrap();
        assert_eq!(state.render_prompt("  "), Err(CognitionError::EmptyMessage));
    }

    #[test]
    fn render_is_pure() {
        let mut state = ConversationState::new(bogus(), Mode::Rlp).unwrap();
        run(&mut state, 3);
        assert_eq!(state.render_prompt("x").unwrap(), state.render_prompt("x").unwrap());
    }

    #[test]
    fn step_populates_frame() {
        let mut state = ConversationState::new(bogus(), Mode::Rlp).unwrap();
        let mut backend = ScriptedBackend::from_texts([reply(0)]);
        let out = state.step("hello", &mut backend).unwrap();
        assert_eq!(out.outgoing, "Hello 0, child.");
        assert_eq!(out.frame.feeling, "glee 0");
        assert_eq!(out.frame.plan, "plan-0: offer a game");
        assert_eq!(out.frame.raw, reply(0));
        assert_eq!(out.frame.stages(), Stage::CYCLE);
        assert_eq!(state.frames.len(), 1);
        assert_eq!(state.user_messages[0].text, "hello");
    }

    #[test]
    fn parse_failure_retries_once_then_fails() {
        let mut state = ConversationState::new(bogus(), Mode::Rlp).unwrap();
        let before = state.clone();
        let mut backend = ScriptedBackend::from_texts(["no tags here", "<FEELING>x</FEELING>"]);
        let err = state.step("hello", &mut backend).unwrap_err();
        assert_eq!(err.attempts.len(), 2);
        assert!(matches!(err.error, StepError::Parse(ParseError::MissingTag(_))));
        assert_eq!(err.raw(), Some("<FEELING>x</FEELING>"));
        assert_eq!(state, before);
        assert_eq!(backend.cursor(), 2);
    }

    #[test]
    fn retry_can_recover_with_repair_suffix() {
        let mut state = ConversationState::new(bogus(), Mode::Rlp).unwrap();
        let mut backend = ScriptedBackend::from_texts(["garbage".to_string(), reply(0)]);
        let out = state.step("hello", &mut backend).unwrap();
        assert_eq!(out.attempts.len(), 2);
        assert_ne!(out.attempts[0].prompt_digest, out.attempts[1].prompt_digest);
        assert_eq!(state.frames.len(), 1);
    }

    #[test]
    fn backend_error_is_not_retried() {
        let mut state = ConversationState::new(bogus(), Mode::Rlp).unwrap();
        let mut backend = ScriptedBackend::from_texts(Vec::<String>::new());
        let err = state.step("hello", &mut backend).unwrap_err();
        assert!(matches!(err.error, StepError::Backend(BackendError::FixtureExhausted { .. })));
        assert_eq!(err.attempts.len(), 1);
        assert!(state.frames.is_empty());
    }

    #[test]
    fn baseline_step_uses_full_reply() {
        let mut state = ConversationState::new(bogus(), Mode::Baseline).unwrap();
        let mut backend = ScriptedBackend::from_texts(["I am Bogus. What do you want?"]);
        let out = state.step("who are you", &mut backend).unwrap();
        assert_eq!(out.outgoing, "I am Bogus. What do you want?");
        assert!(out.frame.feeling.is_empty() && out.frame.thought.is_empty());
        assert!(out.frame.analysis.is_empty() && out.frame.plan.is_empty());
        assert_eq!(out.frame.stages(), [Stage::MessageFormation]);
    }

    #[test]
    fn message_tokens_stream_only_message_text() {
        let mut state = ConversationState::new(bogus(), Mode::Rlp).unwrap();
        let mut backend = ScriptedBackend::from_texts([reply(0)]).with_chunk_chars(1);
        let mut tokens = String::new();
        state
            .step_with("hello", &mut backend, &mut |u| {
                if let StepUpdate::MessageToken { text, .. } = u {
                    tokens.push_str(&text)
                }
            })
            .unwrap();
        assert_eq!(tokens, "Hello 0, child.");
    }

    #[test]
    fn compaction_examples() {
        let p = WindowPolicy::default();
        assert_eq!(p.window(3), vec![0, 1, 2]);
        let mut expected = vec![0];
        expected.extend(5..12);
        assert_eq!(p.window(12), expected);
        assert_eq!(WindowPolicy::new(1, false).unwrap().window(5), vec![4]);
        assert!(WindowPolicy::new(0, true).is_err());
    }

    #[test]
    fn compaction_keeps_ledger() {
        let mut state = ConversationState::new(bogus(), Mode::Rlp).unwrap();
        run(&mut state, 12);
        let compacted = state.compact_history();
        assert_eq!(compacted.frames.len(), 12);
        assert_eq!(compacted.working_window().count(), 8);
        assert_eq!(compacted.working_window().next().unwrap().turn_index, 0);
    }

    #[test]
    fn budget_sheds_recall_then_fails() {
        let mut state = ConversationState::new(bogus(), Mode::Rlp).unwrap();
        run(&mut state, 3);
        let full = state.render_prompt("next").unwrap().estimated_tokens();
        let bare = state.render_with_window("next", &[]).unwrap().estimated_tokens();
        let mut tight = ScriptedBackend::from_texts([reply(3)]).with_context_limit(Some(bare));
        assert!(full > bare);
        state.clone().step("next", &mut tight).unwrap();
        let mut impossible = ScriptedBackend::from_texts([reply(3)]).with_context_limit(Some(bare - 1));
        let err = state.step("next", &mut impossible).unwrap_err();
        assert!(matches!(err.error, StepError::BudgetExceeded { .. }));
    }

    #[test]
    fn ticks_strictly_increase() {
        let mut state = ConversationState::new(bogus(), Mode::Rlp).unwrap();
        run(&mut state, 4);
        let mut last = state.initialization.tick;
        for e in state.frames.iter().flat_map(|f| &f.stage_log) {
            assert!(e.tick > last);
            last = e.tick;
        }
    }
}
