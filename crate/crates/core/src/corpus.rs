//! Annotated corpus model, JSONL persistence, type statistics and long-tail
//! selection.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationKind};

pub mod synthetic;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mention {
    /// First token, inclusive.
    pub start: usize,
    /// One past the last token.
    pub end: usize,
    pub surface: String,
    pub type_name: String,
}

impl Mention {
    pub fn token_len(&self) -> usize {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub id: String,
    pub tokens: Vec<String>,
    pub mentions: Vec<Mention>,
}

impl AnnotatedSentence {
    /// Builds a sentence from whitespace-tokenized text and token spans,
    /// deriving each surface from the tokens.
    pub fn from_spans(id: impl Into<String>, text: &str, spans: &[(usize, usize, &str)]) -> Result<Self> {
        let id = id.into();
        let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        let mut mentions = Vec::with_capacity(spans.len());
        for &(start, end, ty) in spans {
            if end > tokens.len() || start >= end {
                return Err(Error::invalid(
                    &id,
                    ValidationKind::SpanOutOfRange {
                        start,
                        end,
                        tokens: tokens.len(),
                    },
                ));
            }
            mentions.push(Mention {
                start,
                end,
                surface: tokens[start..end].join(" "),
                type_name: ty.to_string(),
            });
        }
        let s = Self { id, tokens, mentions };
        s.validate()?;
        Ok(s)
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    /// Checks span bounds, surfaces, type labels and non-overlap. Mentions must
    /// already be sorted by start.
    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        let mut prev: Option<&Mention> = None;
        for m in &self.mentions {
            if m.end > n {
                return Err(Error::invalid(
                    &self.id,
                    ValidationKind::SpanOutOfRange {
                        start: m.start,
                        end: m.end,
                        tokens: n,
                    },
                ));
            }
            if m.start >= m.end {
                return Err(Error::invalid(
                    &self.id,
                    ValidationKind::EmptySpan {
                        start: m.start,
                        end: m.end,
                    },
                ));
            }
            let expected = self.tokens[m.start..m.end].join(" ");
            if expected != m.surface {
                return Err(Error::invalid(
                    &self.id,
                    ValidationKind::SurfaceMismatch {
                        expected,
                        found: m.surface.clone(),
                    },
                ));
            }
            if m.type_name.trim().is_empty() {
                return Err(Error::invalid(&self.id, ValidationKind::EmptyType));
            }
            if m.type_name.contains(['<', '>']) {
                return Err(Error::invalid(&self.id, ValidationKind::ReservedType(m.type_name.clone())));
            }
            if let Some(p) = prev {
                if m.start < p.end {
                    return Err(Error::invalid(
                        &self.id,
                        ValidationKind::OverlappingSpans {
                            first: (p.start, p.end),
                            second: (m.start, m.end),
                        },
                    ));
                }
            }
            prev = Some(m);
        }
        Ok(())
    }
}

/// Entity type inventory with per-type mention counts.
///
/// Types are kept ranked: descending count, ties broken alphabetically.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ontology {
    types: Vec<String>,
    frequencies: BTreeMap<String, usize>,
}

impl Ontology {
    pub fn from_counts<I, S>(counts: I) -> Self
    where
        I: IntoIterator<Item = (S, usize)>,
        S: Into<String>,
    {
        let frequencies: BTreeMap<String, usize> = counts.into_iter().map(|(k, v)| (k.into(), v)).collect();
        let mut types: Vec<String> = frequencies.keys().cloned().collect();
        types.sort_by(|a, b| frequencies[b].cmp(&frequencies[a]).then_with(|| a.cmp(b)));
        Self { types, frequencies }
    }

    /// Types in rank order.
    pub fn types(&self) -> &[String] {
        &self.types
    }

    pub fn frequencies(&self) -> &BTreeMap<String, usize> {
        &self.frequencies
    }

    pub fn frequency(&self, type_name: &str) -> usize {
        self.frequencies.get(type_name).copied().unwrap_or(0)
    }

    pub fn contains(&self, type_name: &str) -> bool {
        self.frequencies.contains_key(type_name)
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn total(&self) -> usize {
        self.frequencies.values().sum()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: Ontology = serde_json::from_str(&text).map_err(|e| Error::MalformedLine {
            line: e.line(),
            message: e.to_string(),
        })?;
        // re-rank rather than trust the stored order
        Ok(Ontology::from_counts(raw.frequencies))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("ontology serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    sentences: Vec<AnnotatedSentence>,
    ontology: Ontology,
}

impl Corpus {
    /// Validates every sentence (sorting mentions by start) and derives the
    /// ontology from the data.
    pub fn new(mut sentences: Vec<AnnotatedSentence>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &mut sentences {
            if !seen.insert(s.id.clone()) {
                return Err(Error::invalid(&s.id, ValidationKind::DuplicateId));
            }
            s.mentions.sort_by_key(|m| (m.start, m.end));
            s.validate()?;
        }
        let ontology = count_types(&sentences);
        Ok(Self { sentences, ontology })
    }

    pub fn empty() -> Self {
        Self {
            sentences: Vec::new(),
            ontology: Ontology::default(),
        }
    }

    pub fn sentences(&self) -> &[AnnotatedSentence] {
        &self.sentences
    }

    pub fn ontology(&self) -> &Ontology {
        &self.ontology
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn mention_count(&self) -> usize {
        self.sentences.iter().map(|s| s.mentions.len()).sum()
    }

    /// Sub-corpus of the given sentence indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let sentences: Vec<AnnotatedSentence> = indices.iter().map(|&i| self.sentences[i].clone()).collect();
        let ontology = count_types(&sentences);
        Self { sentences, ontology }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.sentences {
            out.push_str(&serde_json::to_string(&Record::from(s)).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(reader: impl Read) -> Result<Self> {
        let mut sentences = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::MalformedLine {
                line: lineno,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: lineno,
                message: e.to_string(),
            })?;
            sentences.push(rec.into_sentence()?);
        }
        Corpus::new(sentences)
    }
}

/// Exact per-type mention counts over a corpus.
pub fn type_frequencies(corpus: &Corpus) -> Ontology {
    count_types(&corpus.sentences)
}

fn count_types(sentences: &[AnnotatedSentence]) -> Ontology {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for m in sentences.iter().flat_map(|s| &s.mentions) {
        *counts.entry(m.type_name.clone()).or_default() += 1;
    }
    Ontology::from_counts(counts)
}

/// The bottom `⌊n/2⌋` types by rank (descending count, ties alphabetical),
/// returned in rank order.
pub fn long_tail_types(ontology: &Ontology) -> Result<Vec<String>> {
    if !ontology.frequencies.values().any(|&c| c > 0) {
        return Err(Error::EmptyOntology);
    }
    let n = ontology.types.len();
    Ok(ontology.types[n - n / 2..].to_vec())
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Corpus::from_jsonl(file)
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(corpus.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))
}

/// On-disk line format.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    text: String,
    entities: Vec<RecordEntity>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordEntity {
    start: usize,
    end: usize,
    mention: String,
    #[serde(rename = "type")]
    type_name: String,
}

impl From<&AnnotatedSentence> for Record {
    fn from(s: &AnnotatedSentence) -> Self {
        Record {
            id: s.id.clone(),
            text: s.text(),
            entities: s
                .mentions
                .iter()
                .map(|m| RecordEntity {
                    start: m.start,
                    end: m.end,
                    mention: m.surface.clone(),
                    type_name: m.type_name.clone(),
                })
                .collect(),
        }
    }
}

impl Record {
    fn into_sentence(self) -> Result<AnnotatedSentence> {
        let tokens: Vec<String> = self.text.split_whitespace().map(str::to_string).collect();
        let mentions = self
            .entities
            .into_iter()
            .map(|e| Mention {
                start: e.start,
                end: e.end,
                surface: e.mention,
                type_name: e.type_name,
            })
            .collect();
        Ok(AnnotatedSentence {
            id: self.id,
            tokens,
            mentions,
        })
    }
}
