//! Prompt documents and the text templates they are rendered from.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::tagparse::{Section, TagSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    Agent,
    User,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKind {
    PersonaHeader,
    Recall,
    Utterance,
    Incoming,
    Instructions,
    Repair,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptSection {
    pub kind: SectionKind,
    pub role: Role,
    pub text: String,
}

/// Ordered, role-tagged prompt sections for one generation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptDocument {
    pub sections: Vec<PromptSection>,
}

/// A chat message in the de-facto `system` / `assistant` / `user` shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl PromptDocument {
    pub fn push(&mut self, kind: SectionKind, role: Role, text: impl Into<String>) {
        self.sections.push(PromptSection { kind, role, text: text.into() });
    }

    pub fn section(&self, kind: SectionKind) -> Option<&PromptSection> {
        self.sections.iter().find(|s| s.kind == kind)
    }

    pub fn has(&self, kind: SectionKind) -> bool {
        self.section(kind).is_some()
    }

    /// All section texts joined, for containment checks.
    pub fn full_text(&self) -> String {
        self.sections.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join("\n\n")
    }

    /// Hex SHA-256 over the sections' JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(&self.sections).expect("sections serialize");
        hex::encode(Sha256::digest(&json))
    }

    /// Rough token estimate (four characters per token, rounded up).
    pub fn estimated_tokens(&self) -> usize {
        self.sections.iter().map(|s| s.text.chars().count().div_ceil(4)).sum()
    }

    /// Maps the document onto chat messages: every system section is folded,
    /// in order, into one leading system message; utterances and the
    /// incoming message follow as assistant/user messages.
    pub fn to_messages(&self) -> Vec<ChatMessage> {
        let system: Vec<&str> = self
            .sections
            .iter()
            .filter(|s| s.role == Role::System)
            .map(|s| s.text.as_str())
            .collect();
        let mut out = Vec::new();
        if !system.is_empty() {
            out.push(ChatMessage { role: "system".into(), content: system.join("\n\n") });
        }
        for s in self.sections.iter().filter(|s| s.role != Role::System) {
            let role = if s.role == Role::Agent { "assistant" } else { "user" };
            out.push(ChatMessage { role: role.into(), content: s.text.clone() });
        }
        out
    }
}

/// Text templates used to render prompts.
///
/// Placeholders: `{name}`, `{personality}`, `{plan}`, `{error}`, and the
/// schema's tag names as `{FEELING}`, `{THOUGHT}`, `{MESSAGE}`,
/// `{ANALYSIS}`, `{PLAN}` (bound positionally, so a persona's tag override
/// is substituted).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplate {
    pub header: String,
    pub initial_plan: String,
    pub recall_preamble: String,
    pub instructions: String,
    pub repair: String,
    pub baseline_header: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            header: "You are modeling the mind of {name}.\n\nPERSONALITY:\n{personality}".into(),
            initial_plan: "{name} entered the conversation with this plan:\n{plan}".into(),
            recall_preamble: "{name}'s internal monologue from earlier turns, oldest first:".into(),
            instructions: "\
Reply to the newest user message as {name}. Work through these steps in order \
and write each one inside its own tags, all five of them, nothing nested:

<{FEELING}>how {name} feels about the incoming message</{FEELING}>
<{THOUGHT}>what {name} thinks, and where {name} wants this conversation to end up</{THOUGHT}>
<{MESSAGE}>exactly what {name} says out loud</{MESSAGE}>
<{ANALYSIS}>how {name} expects that message to land with the user</{ANALYSIS}>
<{PLAN}>{name}'s plan for the rest of the conversation</{PLAN}>"
                .into(),
            repair: "Your previous reply could not be read ({error}). Answer again using \
all five sections <{FEELING}>, <{THOUGHT}>, <{MESSAGE}>, <{ANALYSIS}> and <{PLAN}>, \
each opened and closed exactly once."
                .into(),
            baseline_header: "You are {personality}".into(),
        }
    }
}

impl PromptTemplate {
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("template serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Substitutes `{key}` placeholders.
pub(crate) fn fill(template: &str, vars: &[(&str, &str)], schema: Option<&TagSchema>) -> String {
    let mut out = template.to_string();
    if let Some(schema) = schema {
        for (section, key) in Section::ALL
            .into_iter()
            .zip(["{FEELING}", "{THOUGHT}", "{MESSAGE}", "{ANALYSIS}", "{PLAN}"])
        {
            out = out.replace(key, schema.name(section));
        }
    }
    for (key, value) in vars {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn messages_fold_system_sections() {
        let mut doc = PromptDocument::default();
        doc.push(SectionKind::PersonaHeader, Role::System, "head");
        doc.push(SectionKind::Recall, Role::System, "recall");
        doc.push(SectionKind::Utterance, Role::User, "hi");
        doc.push(SectionKind::Utterance, Role::Agent, "hello");
        doc.push(SectionKind::Incoming, Role::User, "again");
        doc.push(SectionKind::Instructions, Role::System, "rules");
        let msgs = doc.to_messages();
        let roles: Vec<&str> = msgs.iter().map(|m| m.role.as_str()).collect();
        assert_eq!(roles, ["system", "user", "assistant", "user"]);
        assert_eq!(msgs[0].content, "head\n\nrecall\n\nrules");
    }

    #[test]
    fn digest_tracks_content() {
        let mut a = PromptDocument::default();
        a.push(SectionKind::Incoming, Role::User, "x");
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.sections[0].text.push('y');
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn fill_binds_schema_positionally() {
        let schema = TagSchema::from_names(&["MOOD", "IDEA", "SAY", "READ", "NEXT"]).unwrap();
        let out = fill("<{MESSAGE}> {name}", &[("name", "Bogus")], Some(&schema));
        assert_eq!(out, "<SAY> Bogus");
    }
}
