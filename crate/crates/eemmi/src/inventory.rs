//! State alphabet, lexicon, transcripts and the state-sequence collapse rule.
//!
//! Every sentence is modeled as a left-to-right chain over a dense state
//! alphabet: two reserved states for sentence start and end, a blank
//! separator state, and one state per phoneme. The transcript of a sentence
//! is the canonical collapsed chain; a frame-level state sequence maps back
//! to it by erasing repeated states.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub type StateId = usize;

/// Frame-level state sequence (one id per frame).
pub type StateSequence = Vec<StateId>;

pub const START: StateId = 0;
pub const END: StateId = 1;
pub const BLANK: StateId = 2;

pub const RESERVED_NAMES: [&str; 3] = ["start", "end", "blank"];

/// The state alphabet: reserved ids first (start=0, end=1, blank=2), then
/// phonemes in their given order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateInventory {
    names: Vec<String>,
    index: HashMap<String, StateId>,
}

impl StateInventory {
    /// Number of states L.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        false // at least the reserved states exist
    }

    pub fn name(&self, id: StateId) -> &str {
        &self.names[id]
    }

    pub fn id(&self, name: &str) -> Option<StateId> {
        self.index.get(name).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Ids of the phoneme states (everything after the reserved block).
    pub fn phoneme_ids(&self) -> impl Iterator<Item = StateId> {
        RESERVED_NAMES.len()..self.len()
    }

    pub fn is_phoneme(&self, id: StateId) -> bool {
        id >= RESERVED_NAMES.len() && id < self.len()
    }
}

/// Builds the inventory from phoneme names. Ids are deterministic: reserved
/// states first, then the phonemes in input order.
pub fn build_inventory<S: AsRef<str>>(phoneme_names: &[S]) -> Result<StateInventory> {
    if phoneme_names.is_empty() {
        return Err(Error::validation("phoneme list is empty"));
    }
    let mut names: Vec<String> = RESERVED_NAMES.iter().map(|s| s.to_string()).collect();
    let mut index: HashMap<String, StateId> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), i))
        .collect();
    for name in phoneme_names {
        let name = name.as_ref();
        if name.is_empty() {
            return Err(Error::validation("empty phoneme name"));
        }
        if RESERVED_NAMES.contains(&name) {
            return Err(Error::validation(format!(
                "phoneme name `{name}` collides with a reserved state"
            )));
        }
        if index.contains_key(name) {
            return Err(Error::validation(format!("duplicate phoneme name `{name}`")));
        }
        index.insert(name.to_string(), names.len());
        names.push(name.to_string());
    }
    Ok(StateInventory { names, index })
}

/// Word → phoneme-id pronunciation map (single pronunciation per word).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<StateId>>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: &str, phones: Vec<StateId>, inv: &StateInventory) -> Result<()> {
        if word.is_empty() {
            return Err(Error::validation("empty word"));
        }
        if phones.is_empty() {
            return Err(Error::validation(format!("word `{word}` has no phonemes")));
        }
        for &p in &phones {
            if !inv.is_phoneme(p) {
                return Err(Error::validation(format!(
                    "word `{word}` uses id {p} which is not a phoneme state"
                )));
            }
        }
        self.entries.insert(word.to_string(), phones);
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&[StateId]> {
        self.entries.get(word).map(|v| v.as_slice())
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[StateId])> {
        self.entries.iter().map(|(w, p)| (w.as_str(), p.as_slice()))
    }

    /// Parses the lexicon text format: one `word<TAB>phone phone ...` entry
    /// per line, `#` starts a comment.
    pub fn parse(text: &str, inv: &StateInventory) -> Result<Self> {
        let mut lex = Lexicon::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let (word, phones_str) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: lineno + 1,
                msg: "expected `word<TAB>phone phone ...`".into(),
            })?;
            let mut phones = Vec::new();
            for tok in phones_str.split_whitespace() {
                let id = inv.id(tok).ok_or_else(|| Error::Parse {
                    line: lineno + 1,
                    msg: format!("unknown phoneme `{tok}`"),
                })?;
                phones.push(id);
            }
            lex.insert(word.trim(), phones, inv).map_err(|e| Error::Parse {
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(lex)
    }

    pub fn serialize(&self, inv: &StateInventory) -> String {
        let mut out = String::new();
        for (word, phones) in &self.entries {
            let names: Vec<&str> = phones.iter().map(|&p| inv.name(p)).collect();
            let _ = writeln!(out, "{word}\t{}", names.join(" "));
        }
        out
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

/// Collapsed state chain of a sentence: start, blank-separated word
/// pronunciations, end. Never contains two equal adjacent states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript {
    gamma: Vec<StateId>,
}

impl Transcript {
    /// Wraps an explicit state chain. Only the adjacency invariant is
    /// enforced here; [`build_transcript`] produces canonical transcripts.
    pub fn from_states(gamma: Vec<StateId>) -> Result<Self> {
        if gamma.is_empty() {
            return Err(Error::validation("empty transcript"));
        }
        if gamma.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::validation("transcript has equal adjacent states"));
        }
        Ok(Transcript { gamma })
    }

    pub fn states(&self) -> &[StateId] {
        &self.gamma
    }

    /// Last index K (the transcript has K+1 entries).
    pub fn k(&self) -> usize {
        self.gamma.len() - 1
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Phoneme ids with start/end/blank removed.
    pub fn phones(&self) -> Vec<StateId> {
        self.gamma
            .iter()
            .copied()
            .filter(|&s| s != START && s != END && s != BLANK)
            .collect()
    }
}

/// Builds the transcript of a word sequence: start, then for each word a
/// blank followed by its phonemes (with a blank between identical adjacent
/// phonemes), then a final blank and end.
pub fn build_transcript<S: AsRef<str>>(
    words: &[S],
    lexicon: &Lexicon,
    _inv: &StateInventory,
) -> Result<Transcript> {
    if words.is_empty() {
        return Err(Error::validation("empty word sequence"));
    }
    let mut gamma = vec![START];
    for word in words {
        let word = word.as_ref();
        let phones = lexicon
            .get(word)
            .ok_or_else(|| Error::OutOfVocabulary(word.to_string()))?;
        gamma.push(BLANK);
        for (i, &p) in phones.iter().enumerate() {
            if i > 0 && phones[i - 1] == p {
                gamma.push(BLANK);
            }
            gamma.push(p);
        }
    }
    gamma.push(BLANK);
    gamma.push(END);
    debug_assert!(gamma.windows(2).all(|w| w[0] != w[1]));
    Ok(Transcript { gamma })
}

/// Erases repeated states: maximal runs of equal ids become one id.
pub fn collapse_states(s: &[StateId]) -> Vec<StateId> {
    let mut out = Vec::with_capacity(s.len());
    for &id in s {
        if out.last() != Some(&id) {
            out.push(id);
        }
    }
    out
}

/// Parses a transcript text file: one `utt_id<TAB>word word ...` per line.
pub fn parse_transcript_file(text: &str) -> Result<Vec<(String, Vec<String>)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let (utt, words) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: lineno + 1,
            msg: "expected `utt_id<TAB>word word ...`".into(),
        })?;
        let words: Vec<String> = words.split_whitespace().map(|w| w.to_string()).collect();
        out.push((utt.trim().to_string(), words));
    }
    Ok(out)
}
