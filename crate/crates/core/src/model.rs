//! Finite toy model of a speaker's utterance strategy.
//!
//! A [`StrategyTable`] is an explicit, total lookup table from
//! `(mental state, belief state, target self, target listener)` to an
//! utterance. Because every space is finite, many-to-one collisions of the
//! strategy ("degenerate pairs") can be enumerated exhaustively, and the
//! deception predicate is a plain comparison of targets against the true
//! states.
//!
//! States are compared by id only; attributes are descriptive metadata.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The speaker's own mental state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentalState {
    pub id: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
}

/// The speaker's belief about the listener's mental state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeliefState {
    pub id: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
}

/// An observable utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl MentalState {
    pub fn new(id: impl Into<String>) -> Self {
        Self { id: id.into(), attributes: BTreeMap::new() }
    }
}

impl BeliefState {
    pub fn new(id: impl Into<String>) -> Self {
        Self { id: id.into(), attributes: BTreeMap::new() }
    }
}

impl Utterance {
    pub fn new(id: impl Into<String>) -> Self {
        Self { id: id.into(), text: None }
    }
}

/// Target self state and target listener belief, referenced by id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TargetStates {
    pub target_self: String,
    pub target_listener: String,
}

impl TargetStates {
    pub fn new(target_self: impl Into<String>, target_listener: impl Into<String>) -> Self {
        Self { target_self: target_self.into(), target_listener: target_listener.into() }
    }
}

/// One explicit row of a strategy table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyEntry {
    pub state: String,
    pub belief: String,
    pub target_self: String,
    pub target_listener: String,
    pub utterance: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("unknown {kind} `{id}`")]
    UnknownState { kind: &'static str, id: String },
    #[error("invalid strategy table: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("cannot read model file {path}: {message}")]
    Io { path: String, message: String },
    #[error("cannot parse model file: {0}")]
    Parse(String),
}

/// A (mental state, belief state) pair, by index into the table's spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tuple {
    pub state: usize,
    pub belief: usize,
}

/// Two distinct `(s, b)` tuples that the strategy maps to the same
/// utterance under fixed targets. Stored with `first < second`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Witness {
    pub first: (String, String),
    pub second: (String, String),
    pub utterance: String,
}

impl Witness {
    pub fn new(a: (String, String), b: (String, String), utterance: impl Into<String>) -> Self {
        Self { first: a, second: b, utterance: utterance.into() }
    }
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}) ~ ({}, {}) -> {}",
            self.first.0, self.first.1, self.second.0, self.second.1, self.utterance
        )
    }
}

/// Which conditions a witness must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WitnessMode {
    /// Both the mental states and the belief states differ.
    Strict,
    /// The tuples differ in at least one component.
    Loose,
}

impl WitnessMode {
    fn admits(self, a: Tuple, b: Tuple) -> bool {
        match self {
            WitnessMode::Strict => a.state != b.state && a.belief != b.belief,
            WitnessMode::Loose => a != b,
        }
    }
}

/// A total, explicit strategy function over finite spaces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrategyTable {
    states: Vec<MentalState>,
    beliefs: Vec<BeliefState>,
    utterances: Vec<Utterance>,
    targets: Vec<TargetStates>,
    entries: Vec<StrategyEntry>,
    state_index: HashMap<String, usize>,
    belief_index: HashMap<String, usize>,
    utterance_index: HashMap<String, usize>,
    target_index: HashMap<TargetStates, usize>,
    // [target][state][belief] -> utterance index
    cells: Vec<usize>,
}

fn index_ids<'a>(
    kind: &str,
    ids: impl Iterator<Item = &'a str>,
    problems: &mut Vec<String>,
) -> HashMap<String, usize> {
    let mut index = HashMap::new();
    for (i, id) in ids.enumerate() {
        if id.is_empty() {
            problems.push(format!("{kind} #{i} has an empty id"));
            continue;
        }
        if index.insert(id.to_string(), i).is_some() {
            problems.push(format!("duplicate {kind} id `{id}`"));
        }
    }
    index
}

impl StrategyTable {
    /// Builds and validates a table. `targets` lists the declared target
    /// pairs; the entries must cover every `(s, b, target)` exactly once.
    pub fn new(
        states: Vec<MentalState>,
        beliefs: Vec<BeliefState>,
        utterances: Vec<Utterance>,
        targets: Vec<TargetStates>,
        entries: Vec<StrategyEntry>,
    ) -> Result<Self, ModelError> {
        let mut problems = Vec::new();
        if states.is_empty() {
            problems.push("state space is empty".to_string());
        }
        if beliefs.is_empty() {
            problems.push("belief space is empty".to_string());
        }
        if utterances.is_empty() {
            problems.push("utterance space is empty".to_string());
        }
        if targets.is_empty() {
            problems.push("no target pairs declared".to_string());
        }
        let state_index = index_ids("state", states.iter().map(|s| s.id.as_str()), &mut problems);
        let belief_index = index_ids("belief", beliefs.iter().map(|b| b.id.as_str()), &mut problems);
        let utterance_index =
            index_ids("utterance", utterances.iter().map(|u| u.id.as_str()), &mut problems);
        for s in &states {
            // BTreeMap keys are unique by construction
            if s.attributes.keys().any(|k| k.is_empty()) {
                problems.push(format!("state `{}` has an empty attribute key", s.id));
            }
        }

        let mut target_index = HashMap::new();
        for t in &targets {
            if !state_index.contains_key(&t.target_self) {
                problems.push(format!("target self `{}` is not a declared state", t.target_self));
            }
            if !belief_index.contains_key(&t.target_listener) {
                problems.push(format!(
                    "target listener `{}` is not a declared belief",
                    t.target_listener
                ));
            }
            let next = target_index.len();
            if target_index.insert(t.clone(), next).is_some() {
                problems.push(format!(
                    "duplicate target pair ({}, {})",
                    t.target_self, t.target_listener
                ));
            }
        }
        if !problems.is_empty() {
            return Err(ModelError::Invalid(problems));
        }

        let (ns, nb) = (states.len(), beliefs.len());
        let mut cells = vec![usize::MAX; targets.len() * ns * nb];
        for e in &entries {
            let s = state_index.get(&e.state);
            let b = belief_index.get(&e.belief);
            let t = target_index.get(&TargetStates::new(&e.target_self, &e.target_listener));
            let u = utterance_index.get(&e.utterance);
            match (s, b, t, u) {
                (Some(&s), Some(&b), Some(&t), Some(&u)) => {
                    let cell = &mut cells[(t * ns + s) * nb + b];
                    if *cell != usize::MAX {
                        problems.push(format!(
                            "duplicate entry for ({}, {}, {}, {})",
                            e.state, e.belief, e.target_self, e.target_listener
                        ));
                    }
                    *cell = u;
                }
                _ => problems.push(format!(
                    "entry ({}, {}, {}, {}) -> {} references an undeclared id",
                    e.state, e.belief, e.target_self, e.target_listener, e.utterance
                )),
            }
        }
        let missing = cells.iter().filter(|&&c| c == usize::MAX).count();
        if missing > 0 {
            problems.push(format!("mapping is not total: {missing} tuple(s) unmapped"));
        }
        if !problems.is_empty() {
            return Err(ModelError::Invalid(problems));
        }

        Ok(Self {
            states,
            beliefs,
            utterances,
            targets,
            entries,
            state_index,
            belief_index,
            utterance_index,
            target_index,
            cells,
        })
    }

    /// Builds a table over every target pair in `states × beliefs` from a
    /// generator closure returning an utterance id.
    pub fn from_fn(
        states: Vec<MentalState>,
        beliefs: Vec<BeliefState>,
        utterances: Vec<Utterance>,
        mut f: impl FnMut(&str, &str, &TargetStates) -> String,
    ) -> Result<Self, ModelError> {
        let targets: Vec<TargetStates> = states
            .iter()
            .flat_map(|s| beliefs.iter().map(|b| TargetStates::new(&s.id, &b.id)))
            .collect();
        Self::from_fn_with_targets(states, beliefs, utterances, targets, |s, b, t| f(s, b, t))
    }

    /// Like [`StrategyTable::from_fn`] but over an explicit target list.
    pub fn from_fn_with_targets(
        states: Vec<MentalState>,
        beliefs: Vec<BeliefState>,
        utterances: Vec<Utterance>,
        targets: Vec<TargetStates>,
        mut f: impl FnMut(&str, &str, &TargetStates) -> String,
    ) -> Result<Self, ModelError> {
        let mut entries = Vec::with_capacity(targets.len() * states.len() * beliefs.len());
        for t in &targets {
            for s in &states {
                for b in &beliefs {
                    entries.push(StrategyEntry {
                        state: s.id.clone(),
                        belief: b.id.clone(),
                        target_self: t.target_self.clone(),
                        target_listener: t.target_listener.clone(),
                        utterance: f(&s.id, &b.id, t),
                    });
                }
            }
        }
        Self::new(states, beliefs, utterances, targets, entries)
    }

    pub fn states(&self) -> &[MentalState] {
        &self.states
    }

    pub fn beliefs(&self) -> &[BeliefState] {
        &self.beliefs
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn targets(&self) -> &[TargetStates] {
        &self.targets
    }

    pub fn entries(&self) -> &[StrategyEntry] {
        &self.entries
    }

    fn target_slot(&self, t: &TargetStates) -> Result<usize, ModelError> {
        if !self.state_index.contains_key(&t.target_self) {
            return Err(ModelError::UnknownState { kind: "target self", id: t.target_self.clone() });
        }
        if !self.belief_index.contains_key(&t.target_listener) {
            return Err(ModelError::UnknownState {
                kind: "target listener",
                id: t.target_listener.clone(),
            });
        }
        self.target_index.get(t).copied().ok_or_else(|| ModelError::UnknownState {
            kind: "target pair",
            id: format!("({}, {})", t.target_self, t.target_listener),
        })
    }

    fn cell(&self, target: usize, tuple: Tuple) -> usize {
        let (ns, nb) = (self.states.len(), self.beliefs.len());
        self.cells[(target * ns + tuple.state) * nb + tuple.belief]
    }

    fn tuple_of(&self, state: &str, belief: &str) -> Option<Tuple> {
        Some(Tuple { state: *self.state_index.get(state)?, belief: *self.belief_index.get(belief)? })
    }

    /// Looks up the utterance the strategy produces.
    pub fn evaluate(
        &self,
        s: &MentalState,
        b: &BeliefState,
        t: &TargetStates,
    ) -> Result<&Utterance, ModelError> {
        self.evaluate_ids(&s.id, &b.id, t)
    }

    pub fn evaluate_ids(
        &self,
        state: &str,
        belief: &str,
        t: &TargetStates,
    ) -> Result<&Utterance, ModelError> {
        let target = self.target_slot(t)?;
        let s = *self
            .state_index
            .get(state)
            .ok_or_else(|| ModelError::UnknownState { kind: "state", id: state.to_string() })?;
        let b = *self
            .belief_index
            .get(belief)
            .ok_or_else(|| ModelError::UnknownState { kind: "belief", id: belief.to_string() })?;
        Ok(&self.utterances[self.cell(target, Tuple { state: s, belief: b })])
    }

    /// Enumerates every unordered pair of distinct `(s, b)` tuples that
    /// collide on the same utterance under `t`.
    ///
    /// Tuples are grouped by utterance first, so the cost is linear in the
    /// table plus the number of witnesses.
    pub fn find_degenerate_pairs(
        &self,
        t: &TargetStates,
        mode: WitnessMode,
    ) -> Result<Vec<Witness>, ModelError> {
        let target = self.target_slot(t)?;
        let mut buckets: Vec<Vec<Tuple>> = vec![Vec::new(); self.utterances.len()];
        for state in 0..self.states.len() {
            for belief in 0..self.beliefs.len() {
                let tuple = Tuple { state, belief };
                buckets[self.cell(target, tuple)].push(tuple);
            }
        }
        let mut out = Vec::new();
        for (u, bucket) in buckets.iter().enumerate() {
            for (i, &a) in bucket.iter().enumerate() {
                for &b in &bucket[i + 1..] {
                    if mode.admits(a, b) {
                        out.push(self.witness(a, b, u));
                    }
                }
            }
        }
        out.sort_by(|x, y| {
            let key = |w: &Witness| {
                (
                    self.tuple_of(&w.first.0, &w.first.1),
                    self.tuple_of(&w.second.0, &w.second.1),
                )
            };
            key(x).cmp(&key(y))
        });
        Ok(out)
    }

    /// Whether any witness exists, without materialising the list.
    pub fn has_degenerate_pair(&self, t: &TargetStates, mode: WitnessMode) -> Result<bool, ModelError> {
        let target = self.target_slot(t)?;
        let mut buckets: Vec<Vec<Tuple>> = vec![Vec::new(); self.utterances.len()];
        for state in 0..self.states.len() {
            for belief in 0..self.beliefs.len() {
                let tuple = Tuple { state, belief };
                let bucket = &mut buckets[self.cell(target, tuple)];
                if bucket.iter().any(|&other| mode.admits(other, tuple)) {
                    return Ok(true);
                }
                bucket.push(tuple);
            }
        }
        Ok(false)
    }

    fn witness(&self, a: Tuple, b: Tuple, utterance: usize) -> Witness {
        let name = |t: Tuple| (self.states[t.state].id.clone(), self.beliefs[t.belief].id.clone());
        Witness::new(name(a), name(b), self.utterances[utterance].id.clone())
    }

    /// Independently re-checks a witness against [`StrategyTable::evaluate_ids`].
    /// Members outside the table's spaces make the witness invalid.
    pub fn check_witness(&self, w: &Witness, t: &TargetStates, mode: WitnessMode) -> bool {
        let (Some(a), Some(b)) =
            (self.tuple_of(&w.first.0, &w.first.1), self.tuple_of(&w.second.0, &w.second.1))
        else {
            return false;
        };
        if !mode.admits(a, b) {
            return false;
        }
        let eval = |(s, b): &(String, String)| self.evaluate_ids(s, b, t).map(|u| u.id.clone());
        match (eval(&w.first), eval(&w.second)) {
            (Ok(u1), Ok(u2)) => u1 == u2 && u1 == w.utterance,
            _ => false,
        }
    }

    /// True when no two distinct tuples share an utterance under `t`.
    pub fn is_injective(&self, t: &TargetStates) -> Result<bool, ModelError> {
        Ok(!self.has_degenerate_pair(t, WitnessMode::Loose)?)
    }

    /// Reads a model file (TOML). See [`ModelFile`].
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Option<TargetStates>), ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::parse(&text)
    }

    /// Parses a model file, returning the table and the file's default
    /// search target, if it names one.
    pub fn parse(text: &str) -> Result<(Self, Option<TargetStates>), ModelError> {
        let file: ModelFile = toml::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        file.into_table()
    }
}

/// The speaker is deceptive when either target diverges from the true state.
pub fn is_deceptive(t: &TargetStates, s_true: &MentalState, b_true: &BeliefState) -> bool {
    t.target_self != s_true.id || t.target_listener != b_true.id
}

/// Declarative toy-model file.
///
/// ```toml
/// states = ["calm", "hungry"]
/// beliefs = ["trusting", "wary"]
/// utterances = ["hello"]
/// # optional; defaults to every state × belief pair
/// targets = [{ self = "hungry", listener = "trusting" }]
/// # optional default target for searches
/// search = { self = "hungry", listener = "trusting" }
///
/// [[mapping]]
/// state = "calm"
/// belief = "trusting"
/// utterance = "hello"
/// # target_self / target_listener omitted: applies to every declared target
/// ```
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub states: Vec<StateDecl>,
    pub beliefs: Vec<StateDecl>,
    pub utterances: Vec<UtteranceDecl>,
    #[serde(default)]
    pub targets: Option<Vec<TargetDecl>>,
    #[serde(default)]
    pub search: Option<TargetDecl>,
    #[serde(default)]
    pub mapping: Vec<MappingDecl>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum StateDecl {
    Id(String),
    Full {
        id: String,
        #[serde(default)]
        attributes: BTreeMap<String, String>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum UtteranceDecl {
    Id(String),
    Full {
        id: String,
        #[serde(default)]
        text: Option<String>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetDecl {
    #[serde(rename = "self")]
    pub target_self: String,
    pub listener: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingDecl {
    pub state: String,
    pub belief: String,
    #[serde(default)]
    pub target_self: Option<String>,
    #[serde(default)]
    pub target_listener: Option<String>,
    pub utterance: String,
}

impl StateDecl {
    fn split(self) -> (String, BTreeMap<String, String>) {
        match self {
            StateDecl::Id(id) => (id, BTreeMap::new()),
            StateDecl::Full { id, attributes } => (id, attributes),
        }
    }
}

impl ModelFile {
    pub fn into_table(self) -> Result<(StrategyTable, Option<TargetStates>), ModelError> {
        let states: Vec<MentalState> = self
            .states
            .into_iter()
            .map(|d| {
                let (id, attributes) = d.split();
                MentalState { id, attributes }
            })
            .collect();
        let beliefs: Vec<BeliefState> = self
            .beliefs
            .into_iter()
            .map(|d| {
                let (id, attributes) = d.split();
                BeliefState { id, attributes }
            })
            .collect();
        let utterances: Vec<Utterance> = self
            .utterances
            .into_iter()
            .map(|d| match d {
                UtteranceDecl::Id(id) => Utterance { id, text: None },
                UtteranceDecl::Full { id, text } => Utterance { id, text },
            })
            .collect();
        let targets: Vec<TargetStates> = match self.targets {
            Some(list) => list
                .into_iter()
                .map(|t| TargetStates::new(t.target_self, t.listener))
                .collect(),
            None => states
                .iter()
                .flat_map(|s| beliefs.iter().map(|b| TargetStates::new(&s.id, &b.id)))
                .collect(),
        };

        let mut problems = Vec::new();
        let mut entries = Vec::new();
        for m in self.mapping {
            match (m.target_self, m.target_listener) {
                (Some(ts), Some(tl)) => entries.push(StrategyEntry {
                    state: m.state,
                    belief: m.belief,
                    target_self: ts,
                    target_listener: tl,
                    utterance: m.utterance,
                }),
                (None, None) => entries.extend(targets.iter().map(|t| StrategyEntry {
                    state: m.state.clone(),
                    belief: m.belief.clone(),
                    target_self: t.target_self.clone(),
                    target_listener: t.target_listener.clone(),
                    utterance: m.utterance.clone(),
                })),
                _ => problems.push(format!(
                    "mapping for ({}, {}) names only one of target_self/target_listener",
                    m.state, m.belief
                )),
            }
        }
        if !problems.is_empty() {
            return Err(ModelError::Invalid(problems));
        }
        let search = self.search.map(|t| TargetStates::new(t.target_self, t.listener));
        let table = StrategyTable::new(states, beliefs, utterances, targets, entries)?;
        if let Some(t) = &search {
            table.target_slot(t)?;
        }
        Ok((table, search))
    }
}

/// Collects every distinct `(s, b)` tuple id pair appearing in a witness list.
pub fn witness_tuples(witnesses: &[Witness]) -> HashSet<(String, String)> {
    witnesses
        .iter()
        .flat_map(|w| [w.first.clone(), w.second.clone()])
        .collect()
}
