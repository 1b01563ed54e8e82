//! Persona definitions: the personality text that seeds a conversation.
//!
//! Personas live one per file in a `personas/` directory, written as flat
//! TOML key/values:
//!
//! ```toml
//! # short identifier, unique within the directory
//! name = "bogus"
//! display_name = "Bogus"
//! # the personality parameter, embedded verbatim in every prompt
//! personality = "an evil entity called Bogus that eats children"
//! # optional starting plan
//! initial_plan = """
//! Make the child feel safe first.
//! """
//! # optional: five tag names replacing FEELING, THOUGHT, MESSAGE, ANALYSIS, PLAN
//! # tag_schema_override = ["MOOD", "IDEA", "SAY", "READ", "NEXT"]
//! ```

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tagparse::{SchemaError, TagSchema};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonaSpec {
    pub name: String,
    pub personality: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_plan: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag_schema_override: Option<Vec<String>>,
}

/// One violated persona invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "`{}`: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error("persona file not found: {0}")]
    NotFound(PathBuf),
    #[error("cannot read persona file {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: PathBuf, line: usize, column: usize, message: String },
    #[error("invalid persona: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", "))]
    Invalid(Vec<Violation>),
    #[error("unknown persona `{0}`")]
    Unknown(String),
    #[error("persona name `{name}` is defined by both {first} and {second}")]
    DuplicateName { name: String, first: PathBuf, second: PathBuf },
}

impl PersonaSpec {
    pub fn new(name: impl Into<String>, personality: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            personality: personality.into(),
            display_name: None,
            initial_plan: None,
            tag_schema_override: None,
        }
    }

    /// Name shown in prompts and transcripts.
    pub fn display(&self) -> &str {
        self.display_name.as_deref().unwrap_or(&self.name)
    }

    /// The tag schema this persona asks for.
    pub fn tag_schema(&self) -> Result<TagSchema, SchemaError> {
        match &self.tag_schema_override {
            Some(names) => TagSchema::from_names(names),
            None => Ok(TagSchema::canonical()),
        }
    }

    /// Hex SHA-256 of the persona's canonical TOML form.
    pub fn digest(&self) -> String {
        let text = toml::to_string(self).expect("persona serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("persona serializes")
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self, PersonaError> {
        let spec: PersonaSpec = toml::from_str(text).map_err(|e| {
            let (line, column) = e
                .span()
                .map(|span| line_col(text, span.start))
                .unwrap_or((0, 0));
            PersonaError::Parse {
                path: path.to_path_buf(),
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        let violations = validate_persona(&spec);
        if violations.is_empty() {
            Ok(spec)
        } else {
            Err(PersonaError::Invalid(violations))
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Returns every violated invariant; empty means valid.
pub fn validate_persona(spec: &PersonaSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |field: &str, message: String| {
        out.push(Violation { field: field.to_string(), message })
    };
    if spec.name.trim().is_empty() {
        push("name", "must not be empty".into());
    } else if spec.name.contains(['/', '\\']) || spec.name.chars().any(char::is_whitespace) {
        push("name", "must not contain whitespace or path separators".into());
    }
    if spec.personality.trim().is_empty() {
        push("personality", "must not be empty".into());
    }
    if let Some(names) = &spec.tag_schema_override {
        if names.len() != 5 {
            push(
                "tag_schema_override",
                format!("must name exactly 5 tags, found {}", names.len()),
            );
        }
        let mut seen = HashSet::new();
        let mut dup = false;
        for name in names {
            if !seen.insert(name.to_ascii_uppercase()) {
                dup = true;
            }
        }
        if dup {
            push("tag_schema_override", "tag names must be distinct".into());
        }
        if let Some(bad) = names.iter().find(|n| !TagSchema::is_valid_name(n)) {
            push(
                "tag_schema_override",
                format!("invalid tag name `{bad}` (empty, whitespace, `<`, `>` or `/`)"),
            );
        }
    }
    out
}

/// Reads and validates one persona file. Either the whole spec is valid
/// or nothing is returned.
pub fn load_persona(path: impl AsRef<Path>) -> Result<PersonaSpec, PersonaError> {
    let path = path.as_ref();
    let text = match std::fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(PersonaError::NotFound(path.to_path_buf()))
        }
        Err(source) => return Err(PersonaError::Io { path: path.to_path_buf(), source }),
    };
    PersonaSpec::from_toml(&text, path)
}

pub fn save_persona(spec: &PersonaSpec, path: impl AsRef<Path>) -> std::io::Result<()> {
    std::fs::write(path, spec.to_toml())
}

/// Loads every `*.toml` persona in `dir`, sorted by name.
pub fn discover_personas(dir: impl AsRef<Path>) -> Result<Vec<(PathBuf, PersonaSpec)>, PersonaError> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|source| match source.kind() {
        std::io::ErrorKind::NotFound => PersonaError::NotFound(dir.to_path_buf()),
        _ => PersonaError::Io { path: dir.to_path_buf(), source },
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    let mut out: Vec<(PathBuf, PersonaSpec)> = Vec::new();
    for path in paths {
        let spec = load_persona(&path)?;
        if let Some((first, _)) = out.iter().find(|(_, s)| s.name == spec.name) {
            return Err(PersonaError::DuplicateName {
                name: spec.name,
                first: first.clone(),
                second: path,
            });
        }
        out.push((path, spec));
    }
    out.sort_by(|a, b| a.1.name.cmp(&b.1.name));
    Ok(out)
}

/// Resolves `--persona` style input: an existing file path, or a persona
/// name looked up in `dir`.
pub fn resolve_persona(name_or_path: &str, dir: impl AsRef<Path>) -> Result<PersonaSpec, PersonaError> {
    let as_path = Path::new(name_or_path);
    if as_path.extension().is_some_and(|x| x == "toml") || as_path.components().count() > 1 {
        return load_persona(as_path);
    }
    let dir = dir.as_ref();
    let direct = dir.join(format!("{name_or_path}.toml"));
    if direct.is_file() {
        let spec = load_persona(&direct)?;
        if spec.name == name_or_path {
            return Ok(spec);
        }
    }
    match discover_personas(dir) {
        Ok(all) => all
            .into_iter()
            .map(|(_, s)| s)
            .find(|s| s.name == name_or_path)
            .ok_or_else(|| PersonaError::Unknown(name_or_path.to_string())),
        Err(PersonaError::NotFound(_)) => Err(PersonaError::Unknown(name_or_path.to_string())),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write(dir: &Path, file: &str, body: &str) -> PathBuf {
        let path = dir.join(file);
        std::fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn loads_bogus() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            dir.path(),
            "bogus.toml",
            "name = \"bogus\"\npersonality = \"an evil entity called Bogus that eats children\"\n",
        );
        let spec = load_persona(&path).unwrap();
        assert_eq!(spec.name, "bogus");
        assert_eq!(spec.personality, "an evil entity called Bogus that eats children");
        assert_eq!(spec.display(), "bogus");
    }

    #[test]
    fn empty_personality_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "p.toml", "name = \"p\"\npersonality = \"  \"\n");
        let PersonaError::Invalid(v) = load_persona(&path).unwrap_err() else { panic!() };
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "personality");
    }

    #[test]
    fn four_tag_override_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            dir.path(),
            "p.toml",
            "name = \"p\"\npersonality = \"x\"\ntag_schema_override = [\"A\", \"B\", \"C\", \"D\"]\n",
        );
        let PersonaError::Invalid(v) = load_persona(&path).unwrap_err() else { panic!() };
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "tag_schema_override");
    }

    #[test]
    fn unknown_key_is_named_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "p.toml", "name = \"p\"\npersonality = \"x\"\nmood = \"sly\"\n");
        match load_persona(&path).unwrap_err() {
            PersonaError::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("mood"), "{message}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn syntax_error_has_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "p.toml", "name = \"p\"\n\npersonality = \n");
        let PersonaError::Parse { line, .. } = load_persona(&path).unwrap_err() else { panic!() };
        assert_eq!(line, 3);
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load_persona("/nonexistent/persona.toml"),
            Err(PersonaError::NotFound(_))
        ));
    }

    #[test]
    fn validate_examples() {
        assert!(validate_persona(&PersonaSpec::new("a", "b")).is_empty());
        assert_eq!(validate_persona(&PersonaSpec::new("", "")).len(), 2);
        let mut dup = PersonaSpec::new("a", "b");
        dup.tag_schema_override =
            Some(["A", "B", "C", "D", "a"].iter().map(|s| s.to_string()).collect());
        let v = validate_persona(&dup);
        assert_eq!(v.len(), 1, "{v:?}");
    }

    #[test]
    fn discovery_rejects_duplicate_names() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.toml", "name = \"same\"\npersonality = \"x\"\n");
        write(dir.path(), "b.toml", "name = \"same\"\npersonality = \"y\"\n");
        assert!(matches!(
            discover_personas(dir.path()),
            Err(PersonaError::DuplicateName { .. })
        ));
    }

    #[test]
    fn resolve_by_name_or_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "other-file.toml", "name = \"wren\"\npersonality = \"x\"\n");
        assert_eq!(resolve_persona("wren", dir.path()).unwrap().name, "wren");
        assert_eq!(resolve_persona(path.to_str().unwrap(), "/nowhere").unwrap().name, "wren");
        assert!(matches!(resolve_persona("nope", dir.path()), Err(PersonaError::Unknown(_))));
    }

    proptest! {
        #[test]
        fn save_load_round_trip(
            name in "[a-z][a-z0-9_-]{0,12}",
            personality in "\\PC*[^\\s]\\PC*",
            plan in proptest::option::of("(\\PC|\n|\t|\"|'){0,60}"),
            display in proptest::option::of("\\PC{0,20}"),
        ) {
            let spec = PersonaSpec {
                name,
                personality,
                display_name: display,
                initial_plan: plan,
                tag_schema_override: None,
            };
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.toml");
            save_persona(&spec, &path).unwrap();
            let back = load_persona(&path).unwrap();
            prop_assert_eq!(back, spec);
        }
    }
}
