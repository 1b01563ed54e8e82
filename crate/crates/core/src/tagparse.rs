//! Parser and serializer for tagged cognitive-frame markup.
//!
//! A frame is five sections, each wrapped in an open/close tag pair:
//!
//! ```text
//! <FEELING>wicked glee</FEELING>
//! <THOUGHT>lure them</THOUGHT>
//! <MESSAGE>Hello, child.</MESSAGE>
//! <ANALYSIS>they seem wary</ANALYSIS>
//! <PLAN>offer a game</PLAN>
//! ```
//!
//! Rules shared by [`parse_frame`] and the streaming [`FrameParser`]:
//!
//! * a tag token is `<NAME>` or `</NAME>` where `NAME` matches a schema name
//!   ASCII case-insensitively; any other `<...` sequence is plain text;
//! * text outside sections is ignored, and stray close tags outside a
//!   section are ignored;
//! * inside a section, any tag token other than its own close tag is an
//!   [`ParseError::UnclosedTag`] for the open section (no nesting);
//! * opening a section a second time is [`ParseError::DuplicateTag`];
//! * section text is trimmed; a section that is absent or empty after
//!   trimming is [`ParseError::MissingTag`], reported in schema order;
//! * the first error in input order wins; undecodable UTF-8 is
//!   [`ParseError::InvalidUtf8`].

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Role of a section, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Feeling,
    Thought,
    Message,
    Analysis,
    Plan,
}

impl Section {
    pub const ALL: [Section; 5] =
        [Section::Feeling, Section::Thought, Section::Message, Section::Analysis, Section::Plan];

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemaError {
    #[error("a tag schema needs exactly 5 names, got {0}")]
    WrongCount(usize),
    #[error("invalid tag name `{0}`")]
    InvalidName(String),
    #[error("tag name `{0}` appears twice")]
    Duplicate(String),
}

/// Five tag names, positionally bound to the sections
/// feeling, thought, message, analysis and plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct TagSchema {
    names: [String; 5],
}

impl TryFrom<Vec<String>> for TagSchema {
    type Error = SchemaError;

    fn try_from(names: Vec<String>) -> Result<Self, Self::Error> {
        TagSchema::from_names(&names)
    }
}

impl From<TagSchema> for Vec<String> {
    fn from(schema: TagSchema) -> Self {
        schema.names.into()
    }
}

impl Default for TagSchema {
    fn default() -> Self {
        Self::canonical()
    }
}

impl TagSchema {
    pub fn canonical() -> Self {
        Self {
            names: ["FEELING", "THOUGHT", "MESSAGE", "ANALYSIS", "PLAN"].map(String::from),
        }
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self, SchemaError> {
        if names.len() != 5 {
            return Err(SchemaError::WrongCount(names.len()));
        }
        for (i, name) in names.iter().enumerate() {
            let name = name.as_ref();
            if !Self::is_valid_name(name) {
                return Err(SchemaError::InvalidName(name.to_string()));
            }
            if names[..i].iter().any(|n| n.as_ref().eq_ignore_ascii_case(name)) {
                return Err(SchemaError::Duplicate(name.to_string()));
            }
        }
        Ok(Self { names: std::array::from_fn(|i| names[i].as_ref().to_string()) })
    }

    pub fn is_valid_name(name: &str) -> bool {
        !name.is_empty() && !name.chars().any(|c| c.is_whitespace() || matches!(c, '<' | '>' | '/'))
    }

    pub fn name(&self, section: Section) -> &str {
        &self.names[section.index()]
    }

    pub fn names(&self) -> &[String; 5] {
        &self.names
    }

    pub fn message_tag(&self) -> &str {
        self.name(Section::Message)
    }

    pub fn lookup(&self, name: &str) -> Option<Section> {
        Section::ALL.into_iter().find(|&s| self.name(s).eq_ignore_ascii_case(name))
    }

    fn has_prefix(&self, partial: &str) -> bool {
        self.names.iter().any(|n| {
            n.len() >= partial.len() && n.as_bytes()[..partial.len()].eq_ignore_ascii_case(partial.as_bytes())
        })
    }

    /// Opening tag text, e.g. `<PLAN>`.
    pub fn open_tag(&self, section: Section) -> String {
        format!("<{}>", self.name(section))
    }

    pub fn close_tag(&self, section: Section) -> String {
        format!("</{}>", self.name(section))
    }

    /// Whether `text` contains any open or close tag of this schema.
    pub fn contains_tag(&self, text: &str) -> bool {
        let mut rest = text;
        while let Some(at) = rest.find('<') {
            if match_token(&rest[at..], self).is_some() {
                return true;
            }
            rest = &rest[at + 1..];
        }
        false
    }
}

/// The five parsed sections of one frame.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameFields {
    pub feeling: String,
    pub thought: String,
    pub message: String,
    pub analysis: String,
    pub plan: String,
}

impl FrameFields {
    pub fn get(&self, section: Section) -> &str {
        match section {
            Section::Feeling => &self.feeling,
            Section::Thought => &self.thought,
            Section::Message => &self.message,
            Section::Analysis => &self.analysis,
            Section::Plan => &self.plan,
        }
    }

    pub fn get_mut(&mut self, section: Section) -> &mut String {
        match section {
            Section::Feeling => &mut self.feeling,
            Section::Thought => &mut self.thought,
            Section::Message => &mut self.message,
            Section::Analysis => &mut self.analysis,
            Section::Plan => &mut self.plan,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "error", content = "tag", rename_all = "snake_case")]
pub enum ParseError {
    #[error("missing tag {0}")]
    MissingTag(String),
    #[error("duplicate tag {0}")]
    DuplicateTag(String),
    #[error("unclosed tag {0}")]
    UnclosedTag(String),
    #[error("input is not valid UTF-8")]
    InvalidUtf8,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SerializeError {
    #[error("frame field {0} is missing")]
    MissingField(String),
    #[error("frame field {0} contains a literal tag")]
    ContainsTag(String),
}

/// If `s` (starting with `<`) begins with a schema tag token, returns
/// `(is_close, section, token_len)`.
fn match_token(s: &str, schema: &TagSchema) -> Option<(bool, Section, usize)> {
    let body = s.strip_prefix('<')?;
    let (closing, body) = match body.strip_prefix('/') {
        Some(rest) => (true, rest),
        None => (false, body),
    };
    let end = body.find('>')?;
    let section = schema.lookup(&body[..end])?;
    Some((closing, section, 1 + usize::from(closing) + end + 1))
}

struct Scan {
    open: Option<(Section, usize)>,
    seen: [bool; 5],
    fields: [Option<String>; 5],
}

/// Walks `text`, stopping at the first error that can be decided without
/// seeing the end of input.
fn scan(text: &str, schema: &TagSchema) -> Result<Scan, ParseError> {
    let mut st = Scan { open: None, seen: [false; 5], fields: Default::default() };
    let mut i = 0;
    while let Some(off) = text[i..].find('<') {
        let at = i + off;
        let Some((closing, section, len)) = match_token(&text[at..], schema) else {
            i = at + 1;
            continue;
        };
        match st.open {
            None if closing => {}
            None => {
                if st.seen[section.index()] {
                    return Err(ParseError::DuplicateTag(schema.name(section).to_string()));
                }
                st.seen[section.index()] = true;
                st.open = Some((section, at + len));
            }
            Some((current, start)) => {
                if !(closing && section == current) {
                    return Err(ParseError::UnclosedTag(schema.name(current).to_string()));
                }
                st.fields[current.index()] = Some(text[start..at].trim().to_string());
                st.open = None;
            }
        }
        i = at + len;
    }
    Ok(st)
}

fn finish_scan(st: Scan, schema: &TagSchema) -> Result<FrameFields, ParseError> {
    if let Some((current, _)) = st.open {
        return Err(ParseError::UnclosedTag(schema.name(current).to_string()));
    }
    let mut fields = FrameFields::default();
    for section in Section::ALL {
        match &st.fields[section.index()] {
            Some(text) if !text.is_empty() => *fields.get_mut(section) = text.clone(),
            _ => return Err(ParseError::MissingTag(schema.name(section).to_string())),
        }
    }
    Ok(fields)
}

/// Parses a complete model output into its five sections.
pub fn parse_frame(text: &str, schema: &TagSchema) -> Result<FrameFields, ParseError> {
    finish_scan(scan(text, schema)?, schema)
}

/// Byte-level entry point; errors on undecodable input.
pub fn parse_frame_bytes(bytes: &[u8], schema: &TagSchema) -> Result<FrameFields, ParseError> {
    match std::str::from_utf8(bytes) {
        Ok(text) => parse_frame(text, schema),
        Err(e) => {
            // errors decidable inside the valid prefix come first
            let prefix = std::str::from_utf8(&bytes[..e.valid_up_to()]).expect("valid prefix");
            scan(prefix, schema)?;
            Err(ParseError::InvalidUtf8)
        }
    }
}

/// Renders a frame in canonical form: one block per section, schema order.
pub fn serialize_frame(fields: &FrameFields, schema: &TagSchema) -> Result<String, SerializeError> {
    let mut out = String::new();
    for section in Section::ALL {
        let name = schema.name(section);
        let text = fields.get(section);
        if text.trim().is_empty() {
            return Err(SerializeError::MissingField(name.to_string()));
        }
        if schema.contains_tag(text) {
            return Err(SerializeError::ContainsTag(name.to_string()));
        }
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&format!("<{name}>{text}</{name}>"));
    }
    Ok(out)
}

/// Incremental parser output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseEvent {
    TagOpen(Section),
    Text(Section, String),
    TagClose(Section),
    FrameComplete(FrameFields),
    Error(ParseError),
}

impl fmt::Display for ParseEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseEvent::TagOpen(s) => write!(f, "open {s:?}"),
            ParseEvent::Text(s, t) => write!(f, "text {s:?} {t:?}"),
            ParseEvent::TagClose(s) => write!(f, "close {s:?}"),
            ParseEvent::FrameComplete(_) => write!(f, "complete"),
            ParseEvent::Error(e) => write!(f, "error {e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Status {
    Running,
    Failed(ParseError),
    Finished,
}

/// Streaming counterpart of [`parse_frame`].
///
/// Text inside a section is emitted as soon as it can no longer be part of
/// a tag token or of trailing whitespace, so the concatenated
/// [`ParseEvent::Text`] payloads for a section equal the batch-parsed field.
#[derive(Debug, Clone)]
pub struct FrameParser {
    schema: TagSchema,
    status: Status,
    // undecoded trailing bytes of an incomplete UTF-8 sequence
    utf8_tail: Vec<u8>,
    // held-back text starting with `<` that may still become a tag token
    pending: String,
    open: Option<Section>,
    seen: [bool; 5],
    fields: FrameFields,
    started: bool,
    held_ws: String,
    text_out: String,
}

impl FrameParser {
    pub fn new(schema: TagSchema) -> Self {
        Self {
            schema,
            status: Status::Running,
            utf8_tail: Vec::new(),
            pending: String::new(),
            open: None,
            seen: [false; 5],
            fields: FrameFields::default(),
            started: false,
            held_ws: String::new(),
            text_out: String::new(),
        }
    }

    pub fn schema(&self) -> &TagSchema {
        &self.schema
    }

    /// Section currently open, if any.
    pub fn open_section(&self) -> Option<Section> {
        self.open
    }

    pub fn feed(&mut self, chunk: &str) -> Vec<ParseEvent> {
        self.feed_bytes(chunk.as_bytes())
    }

    pub fn feed_bytes(&mut self, chunk: &[u8]) -> Vec<ParseEvent> {
        let mut events = Vec::new();
        if self.status != Status::Running {
            return events;
        }
        self.utf8_tail.extend_from_slice(chunk);
        let buf = std::mem::take(&mut self.utf8_tail);
        let (valid, rest, invalid) = match std::str::from_utf8(&buf) {
            Ok(text) => (text, &[][..], false),
            Err(e) => {
                let (head, tail) = buf.split_at(e.valid_up_to());
                let head = std::str::from_utf8(head).expect("valid prefix");
                (head, tail, e.error_len().is_some())
            }
        };
        for c in valid.chars() {
            self.push_char(c, &mut events);
            if self.status != Status::Running {
                return events;
            }
        }
        self.flush_text(&mut events);
        if invalid {
            self.fail(ParseError::InvalidUtf8, &mut events);
        } else {
            self.utf8_tail = rest.to_vec();
        }
        events
    }

    /// Ends the stream, yielding [`ParseEvent::FrameComplete`] or
    /// [`ParseEvent::Error`] as the final event.
    pub fn finish(&mut self) -> Vec<ParseEvent> {
        let mut events = Vec::new();
        match &self.status {
            Status::Failed(e) => {
                events.push(ParseEvent::Error(e.clone()));
                return events;
            }
            Status::Finished => return events,
            Status::Running => {}
        }
        if !self.utf8_tail.is_empty() {
            self.fail(ParseError::InvalidUtf8, &mut events);
            return events;
        }
        let pending = std::mem::take(&mut self.pending);
        for c in pending.chars() {
            self.text_char(c);
        }
        self.flush_text(&mut events);
        if let Some(current) = self.open {
            self.fail(ParseError::UnclosedTag(self.schema.name(current).to_string()), &mut events);
            return events;
        }
        for section in Section::ALL {
            if !self.seen[section.index()] || self.fields.get(section).is_empty() {
                self.fail(ParseError::MissingTag(self.schema.name(section).to_string()), &mut events);
                return events;
            }
        }
        self.status = Status::Finished;
        events.push(ParseEvent::FrameComplete(self.fields.clone()));
        events
    }

    fn fail(&mut self, error: ParseError, events: &mut Vec<ParseEvent>) {
        self.status = Status::Failed(error.clone());
        events.push(ParseEvent::Error(error));
    }

    fn push_char(&mut self, c: char, events: &mut Vec<ParseEvent>) {
        if self.pending.is_empty() {
            if c == '<' {
                self.pending.push(c);
            } else {
                self.text_char(c);
            }
            return;
        }
        self.pending.push(c);
        match self.classify_pending() {
            Pending::Viable => {}
            Pending::Token(closing, section) => {
                self.pending.clear();
                self.flush_text(events);
                self.token(closing, section, events);
            }
            Pending::Dead => {
                // the leading `<` is text; re-scan what followed it
                let held = std::mem::take(&mut self.pending);
                let mut chars = held.chars();
                chars.next();
                self.text_char('<');
                for c in chars {
                    self.push_char(c, events);
                    if self.status != Status::Running {
                        return;
                    }
                }
            }
        }
    }

    fn classify_pending(&self) -> Pending {
        let body = &self.pending[1..];
        let (closing, body) = match body.strip_prefix('/') {
            Some(rest) => (true, rest),
            None => (false, body),
        };
        if let Some(name) = body.strip_suffix('>') {
            return match self.schema.lookup(name) {
                Some(section) if !name.contains('>') => Pending::Token(closing, section),
                _ => Pending::Dead,
            };
        }
        if self.schema.has_prefix(body) {
            Pending::Viable
        } else {
            Pending::Dead
        }
    }

    fn token(&mut self, closing: bool, section: Section, events: &mut Vec<ParseEvent>) {
        match self.open {
            None if closing => {}
            None => {
                if self.seen[section.index()] {
                    self.fail(ParseError::DuplicateTag(self.schema.name(section).to_string()), events);
                    return;
                }
                self.seen[section.index()] = true;
                self.open = Some(section);
                self.started = false;
                self.held_ws.clear();
                events.push(ParseEvent::TagOpen(section));
            }
            Some(current) => {
                if !(closing && section == current) {
                    self.fail(ParseError::UnclosedTag(self.schema.name(current).to_string()), events);
                    return;
                }
                self.open = None;
                self.held_ws.clear();
                events.push(ParseEvent::TagClose(current));
            }
        }
    }

    fn text_char(&mut self, c: char) {
        if self.open.is_none() {
            return;
        }
        if c.is_whitespace() {
            if self.started {
                self.held_ws.push(c);
            }
            return;
        }
        self.started = true;
        self.text_out.push_str(&self.held_ws);
        self.held_ws.clear();
        self.text_out.push(c);
    }

    fn flush_text(&mut self, events: &mut Vec<ParseEvent>) {
        if self.text_out.is_empty() {
            return;
        }
        let text = std::mem::take(&mut self.text_out);
        if let Some(section) = self.open {
            self.fields.get_mut(section).push_str(&text);
            events.push(ParseEvent::Text(section, text));
        }
    }
}

enum Pending {
    Viable,
    Token(bool, Section),
    Dead,
}

/// Feeds `chunks` through a fresh [`FrameParser`] and returns every event.
pub fn parse_stream<'a>(
    chunks: impl IntoIterator<Item = &'a [u8]>,
    schema: &TagSchema,
) -> Vec<ParseEvent> {
    let mut parser = FrameParser::new(schema.clone());
    let mut events = Vec::new();
    for chunk in chunks {
        events.extend(parser.feed_bytes(chunk));
    }
    events.extend(parser.finish());
    events
}

/// Final outcome of an event sequence.
pub fn stream_outcome(events: &[ParseEvent]) -> Option<Result<FrameFields, ParseError>> {
    events.iter().rev().find_map(|e| match e {
        ParseEvent::FrameComplete(f) => Some(Ok(f.clone())),
        ParseEvent::Error(e) => Some(Err(e.clone())),
        _ => None,
    })
}
