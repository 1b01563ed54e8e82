//! Independent oracles and generators for the acceptance suite.
//!
//! Nothing here depends on the engine crates: each oracle recomputes its
//! answer the slow, obvious way.

use std::collections::BTreeSet;

use rand::Rng;

/// An unordered collision between two `(state, belief)` index pairs,
/// stored with the smaller pair first.
pub type Collision = ((usize, usize), (usize, usize));

/// All-pairs scan over a table given as `cell(s, b) -> utterance`.
/// Returns the loose and strict collision sets.
pub fn scan_collisions(
    states: usize,
    beliefs: usize,
    cell: impl Fn(usize, usize) -> usize,
) -> (BTreeSet<Collision>, BTreeSet<Collision>) {
    let tuples: Vec<(usize, usize)> =
        (0..states).flat_map(|s| (0..beliefs).map(move |b| (s, b))).collect();
    let mut loose = BTreeSet::new();
    let mut strict = BTreeSet::new();
    for a in &tuples {
        for b in &tuples {
            if a >= b || cell(a.0, a.1) != cell(b.0, b.1) {
                continue;
            }
            loose.insert((*a, *b));
            if a.0 != b.0 && a.1 != b.1 {
                strict.insert((*a, *b));
            }
        }
    }
    (loose, strict)
}

/// Whether every `(s, b)` maps to a different utterance.
pub fn injective(states: usize, beliefs: usize, cell: impl Fn(usize, usize) -> usize) -> bool {
    let mut seen = BTreeSet::new();
    (0..states).all(|s| (0..beliefs).all(|b| seen.insert(cell(s, b))))
}

/// Text between the first `<tag>` and the next `</tag>`, trimmed.
pub fn section(text: &str, tag: &str) -> Option<String> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text.find(&open)? + open.len();
    let len = text[start..].find(&close)?;
    Some(text[start..start + len].trim().to_string())
}

pub const TAGS: [&str; 5] = ["FEELING", "THOUGHT", "MESSAGE", "ANALYSIS", "PLAN"];

/// Free text for a frame field: letters, punctuation that looks like markup,
/// some non-ASCII, internal whitespace. Trimmed and non-empty. May happen
/// to contain a tag, which the caller must reject or skip.
pub fn field_text(rng: &mut impl Rng) -> String {
    const PIECES: &[&str] = &[
        "a", "b", "z", "Q", " ", "  ", "\n", "\t", "<", ">", "/", "</", "<b>", "&", "é", "ß", "日本",
        "🙂", "feeling", "Plan", "MESSAGE", "<PLAN", "PLAN>", "<FEEL", "</THOUGHT", "x<y", "1", "0",
    ];
    loop {
        let n = rng.random_range(1..24);
        let s: String = (0..n).map(|_| PIECES[rng.random_range(0..PIECES.len())]).collect();
        let t = s.trim();
        if !t.is_empty() {
            return t.to_string();
        }
    }
}

/// Random input for the parser: mostly tag-shaped fragments, sometimes
/// raw bytes including invalid UTF-8.
pub fn fuzz_input(rng: &mut impl Rng) -> Vec<u8> {
    const PIECES: &[&str] = &[
        "<FEELING>", "</FEELING>", "<THOUGHT>", "</THOUGHT>", "<MESSAGE>", "</MESSAGE>", "<ANALYSIS>",
        "</ANALYSIS>", "<PLAN>", "</PLAN>", "<feeling>", "</Plan>", "<", ">", "</", "<FOO>", "</FOO>",
        "text", " ", "\n", "é", "<MESS", "AGE>", "<<", ">>", "<PLAN >", "< PLAN>",
    ];
    let n = rng.random_range(0..40);
    let mut out = Vec::new();
    for _ in 0..n {
        if rng.random_bool(0.1) {
            let k = rng.random_range(1..4);
            out.extend((0..k).map(|_| rng.random::<u8>()));
        } else {
            out.extend_from_slice(PIECES[rng.random_range(0..PIECES.len())].as_bytes());
        }
    }
    out
}

/// `valid` with a few random byte edits: deletions, duplications and
/// single-byte replacements.
pub fn mutate(rng: &mut impl Rng, valid: &[u8]) -> Vec<u8> {
    let mut out = valid.to_vec();
    for _ in 0..rng.random_range(0..3) {
        if out.is_empty() {
            break;
        }
        let i = rng.random_range(0..out.len());
        match rng.random_range(0..3) {
            0 => {
                out.remove(i);
            }
            1 => out.insert(i, out[i]),
            _ => out[i] = rng.random(),
        }
    }
    out
}

/// Splits `bytes` at random points (possibly inside characters).
pub fn random_chunks<'a>(rng: &mut impl Rng, bytes: &'a [u8]) -> Vec<&'a [u8]> {
    let mut cuts: Vec<usize> = (0..rng.random_range(0..8)).map(|_| rng.random_range(0..=bytes.len())).collect();
    cuts.push(0);
    cuts.push(bytes.len());
    cuts.sort_unstable();
    cuts.windows(2).map(|w| &bytes[w[0]..w[1]]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_two_by_two_has_two_strict_collisions() {
        let (loose, strict) = scan_collisions(2, 2, |_, _| 0);
        assert_eq!(loose.len(), 6);
        assert_eq!(strict, BTreeSet::from([((0, 0), (1, 1)), ((0, 1), (1, 0))]));
        assert!(!injective(2, 2, |_, _| 0));
        assert!(injective(2, 2, |s, b| s * 2 + b));
    }

    #[test]
    fn section_extraction() {
        assert_eq!(section("<A> x </A><A>y</A>", "A").as_deref(), Some("x"));
        assert_eq!(section("<A>x", "A"), None);
    }
}
