//! Codec between entity lists and the flat `mention <Type>, ...` target
//! string, plus the token vocabulary shared by extractor and validator.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, Corpus, Ontology};
use crate::error::{Error, Result};

/// Separator between linearized segments.
pub const SEGMENT_SEP: &str = ", ";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Entity {
    #[serde(rename = "mention")]
    pub surface: String,
    #[serde(rename = "type")]
    pub type_name: String,
}

impl Entity {
    pub fn new(surface: impl Into<String>, type_name: impl Into<String>) -> Self {
        Self {
            surface: surface.into(),
            type_name: type_name.into(),
        }
    }
}

/// Ordered (mention, type) pairs.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityList {
    pub entries: Vec<Entity>,
}

impl EntityList {
    pub fn new(entries: Vec<Entity>) -> Self {
        Self { entries }
    }

    /// Gold entities of a sentence, in mention order.
    pub fn from_sentence(s: &AnnotatedSentence) -> Self {
        Self {
            entries: s
                .mentions
                .iter()
                .map(|m| Entity::new(m.surface.clone(), m.type_name.clone()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn check_entity(e: &Entity) -> Result<()> {
    if e.surface.trim().is_empty() {
        return Err(Error::EmptySurface);
    }
    if e.type_name.trim().is_empty() || e.type_name.contains(['<', '>']) || e.type_name.contains(SEGMENT_SEP) {
        return Err(Error::ReservedDelimiter(e.type_name.clone()));
    }
    if e.surface.contains(['<', '>']) || e.surface.contains(SEGMENT_SEP) {
        return Err(Error::ReservedDelimiter(e.surface.clone()));
    }
    Ok(())
}

/// Renders `μ₁ <ρ₁>, μ₂ <ρ₂>, ...`; the empty list renders as `""`.
pub fn linearize(entities: &EntityList) -> Result<String> {
    let mut out = String::new();
    for (i, e) in entities.entries.iter().enumerate() {
        check_entity(e)?;
        if i > 0 {
            out.push_str(SEGMENT_SEP);
        }
        out.push_str(&e.surface);
        out.push_str(" <");
        out.push_str(&e.type_name);
        out.push('>');
    }
    Ok(out)
}

/// What [`parse_linearized`] could not take at face value.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParseDiagnostics {
    /// Non-empty segments that did not match `surface <type>`.
    pub skipped: Vec<String>,
    /// Indices into the recovered entries whose type is not in the ontology.
    pub out_of_ontology: Vec<usize>,
}

impl ParseDiagnostics {
    pub fn skipped_count(&self) -> usize {
        self.skipped.len()
    }
}

fn parse_segment(seg: &str) -> Option<Entity> {
    let body = seg.strip_suffix('>')?;
    let open = body.rfind(" <")?;
    let surface = &body[..open];
    let type_name = &body[open + 2..];
    if surface.trim().is_empty() || type_name.trim().is_empty() {
        return None;
    }
    if surface.contains(['<', '>']) || type_name.contains(['<', '>']) {
        return None;
    }
    Some(Entity::new(surface, type_name))
}

/// Recovers entities from arbitrary generated text. Never fails: malformed
/// segments are skipped and reported, out-of-ontology types are kept and
/// flagged.
pub fn parse_linearized(text: &str, ontology: &Ontology) -> (EntityList, ParseDiagnostics) {
    let mut entries = Vec::new();
    let mut diag = ParseDiagnostics::default();
    let text = text.trim();
    if text.is_empty() {
        return (EntityList::default(), diag);
    }
    for seg in text.split(SEGMENT_SEP) {
        if seg.trim().is_empty() {
            continue;
        }
        match parse_segment(seg) {
            Some(e) => {
                if !ontology.contains(&e.type_name) {
                    diag.out_of_ontology.push(entries.len());
                }
                entries.push(e);
            }
            None => diag.skipped.push(seg.to_string()),
        }
    }
    (EntityList::new(entries), diag)
}

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const TYPE_OPEN: usize = 4;
pub const TYPE_CLOSE: usize = 5;
pub const SEP: usize = 6;

const SPECIALS: [&str; 7] = ["<pad>", "<s>", "</s>", "<unk>", "<", ">", ","];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Specials followed by `words` in the given order (duplicates and
    /// special strings dropped).
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, usize> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        for w in words {
            let w = w.as_ref();
            if !index.contains_key(w) {
                index.insert(w.to_string(), tokens.len());
                tokens.push(w.to_string());
            }
        }
        Self { tokens, index }
    }

    /// Rebuilds the lookup table after deserialization.
    pub fn reindex(mut self) -> Self {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(id: usize) -> bool {
        id < SPECIALS.len()
    }
}

/// Sentence tokens plus type-name words, sorted, after the seven specials.
pub fn build_vocab(corpus: &Corpus) -> Vocab {
    let mut words = BTreeSet::new();
    for s in corpus.sentences() {
        words.extend(s.tokens.iter().map(String::as_str));
        for m in &s.mentions {
            words.extend(m.type_name.split_whitespace());
        }
    }
    Vocab::from_words(words)
}

/// Whitespace tokens to ids, unknown tokens to `UNK`.
pub fn encode_text(text: &str, vocab: &Vocab) -> Vec<usize> {
    text.split_whitespace().map(|t| vocab.id(t).unwrap_or(UNK)).collect()
}

pub fn decode_tokens(ids: &[usize], vocab: &Vocab) -> Result<String> {
    let mut words = Vec::with_capacity(ids.len());
    for &id in ids {
        words.push(vocab.token(id).ok_or(Error::TokenOutOfRange { id, size: vocab.len() })?);
    }
    Ok(words.join(" "))
}

/// Token ids of a linearized entity list, terminated by `EOS`. Delimiters
/// map to their dedicated ids; surfaces may contain any vocabulary token.
pub fn encode_entities(entities: &EntityList, vocab: &Vocab) -> Vec<usize> {
    let mut ids = Vec::new();
    for (i, e) in entities.entries.iter().enumerate() {
        if i > 0 {
            ids.push(SEP);
        }
        ids.extend(e.surface.split_whitespace().map(|t| word_id(t, vocab)));
        ids.push(TYPE_OPEN);
        ids.extend(e.type_name.split_whitespace().map(|t| word_id(t, vocab)));
        ids.push(TYPE_CLOSE);
    }
    ids.push(EOS);
    ids
}

// Inside a target, a literal "<", ">" or "," word must not collide with
// the structural delimiter ids.
fn word_id(t: &str, vocab: &Vocab) -> usize {
    match vocab.id(t) {
        Some(id) if id > SEP => id,
        _ => UNK,
    }
}

/// Renders generated ids back to linearized text, stopping at `EOS` and
/// ignoring `PAD`/`BOS`.
pub fn decode_linearized(ids: &[usize], vocab: &Vocab) -> Result<String> {
    let mut out = String::new();
    let mut need_space = false;
    for &id in ids {
        match id {
            EOS => break,
            PAD | BOS => {}
            TYPE_OPEN => {
                if need_space {
                    out.push(' ');
                }
                out.push('<');
                need_space = false;
            }
            TYPE_CLOSE => {
                out.push('>');
                need_space = true;
            }
            SEP => {
                out.push_str(SEGMENT_SEP);
                need_space = false;
            }
            _ => {
                let w = vocab.token(id).ok_or(Error::TokenOutOfRange { id, size: vocab.len() })?;
                if need_space {
                    out.push(' ');
                }
                out.push_str(w);
                need_space = true;
            }
        }
    }
    Ok(out)
}
