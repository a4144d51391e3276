//! Sentences, entity spans, label inventories and dataset I/O.

mod bio;
mod conll;
mod synth;
mod vocab;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bio::{parse_tag, spans_to_tags, tags_to_spans, Tag};
pub use conll::{load_conll, read_conll, scan_entity_types, write_conll};
pub use synth::{generate_synthetic, SyntheticSpec, SyntheticType};
pub use vocab::{build_vocab, Vocabulary, PAD, UNK};

pub const OUTSIDE: &str = "O";

/// Longest entity, in words, that span enumeration covers by default.
pub const MAX_ENTITY_WORDS: usize = 8;

/// An inclusive word range `[start, end]` with an entity type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub entity_type: String,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, entity_type: impl Into<String>) -> Self {
        EntitySpan {
            start,
            end,
            entity_type: entity_type.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlaps(&self, other: &EntitySpan) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Sentence {
    pub words: Vec<String>,
    pub tags: Vec<String>,
}

impl Sentence {
    pub fn new(words: Vec<String>, tags: Vec<String>) -> Result<Self> {
        if words.len() != tags.len() {
            return Err(Error::Shape(format!(
                "{} words but {} tags",
                words.len(),
                tags.len()
            )));
        }
        Ok(Sentence { words, tags })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn spans(&self) -> Vec<EntitySpan> {
        tags_to_spans(&self.tags)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
}

impl Corpus {
    pub fn new(sentences: Vec<Sentence>) -> Self {
        Corpus { sentences }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sentence> {
        self.sentences.iter()
    }

    pub fn gold_spans(&self) -> Vec<Vec<EntitySpan>> {
        self.sentences.iter().map(Sentence::spans).collect()
    }

    pub fn num_words(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    pub fn mean_length(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.num_words() as f64 / self.len() as f64
        }
    }

    /// Entity statistics, flagging gold entities longer than `max_span_len`
    /// words (they are kept but no candidate span can match them).
    pub fn load_report(&self, max_span_len: usize) -> LoadReport {
        let mut report = LoadReport {
            sentences: self.len(),
            words: self.num_words(),
            ..LoadReport::default()
        };
        for (idx, sentence) in self.sentences.iter().enumerate() {
            for span in sentence.spans() {
                report.entities += 1;
                if span.len() > max_span_len {
                    report.over_length.push(OverLength {
                        sentence: idx,
                        span,
                    });
                }
            }
        }
        report
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Sentence;
    type IntoIter = std::slice::Iter<'a, Sentence>;

    fn into_iter(self) -> Self::IntoIter {
        self.sentences.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverLength {
    pub sentence: usize,
    pub span: EntitySpan,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LoadReport {
    pub sentences: usize,
    pub words: usize,
    pub entities: usize,
    pub over_length: Vec<OverLength>,
}

/// Entity types `E` (with `O` at index 0) and their BIO expansion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSet {
    entity_types: Vec<String>,
    bio_labels: Vec<String>,
}

impl LabelSet {
    /// Build from the entity types excluding `O`.
    pub fn new<S: AsRef<str>>(types: &[S]) -> Result<Self> {
        let mut entity_types = vec![OUTSIDE.to_string()];
        for t in types {
            let t = t.as_ref();
            if t.is_empty() || t == OUTSIDE || t.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("invalid entity type `{t}`")));
            }
            if entity_types.iter().any(|e| e == t) {
                return Err(Error::Config(format!("duplicate entity type `{t}`")));
            }
            entity_types.push(t.to_string());
        }
        let mut bio_labels = vec![OUTSIDE.to_string()];
        for t in &entity_types[1..] {
            bio_labels.push(format!("B-{t}"));
            bio_labels.push(format!("I-{t}"));
        }
        Ok(LabelSet {
            entity_types,
            bio_labels,
        })
    }

    /// `E`, including `O` at index 0.
    pub fn entity_types(&self) -> &[String] {
        &self.entity_types
    }

    /// `E_BI`, including `O` at index 0.
    pub fn bio_labels(&self) -> &[String] {
        &self.bio_labels
    }

    pub fn num_types(&self) -> usize {
        self.entity_types.len()
    }

    pub fn num_bio(&self) -> usize {
        self.bio_labels.len()
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.entity_types.iter().position(|t| t == name)
    }

    pub fn type_name(&self, index: usize) -> &str {
        &self.entity_types[index]
    }

    pub fn bio_index(&self, tag: &str) -> Option<usize> {
        self.bio_labels.iter().position(|t| t == tag)
    }

    pub fn bio_name(&self, index: usize) -> &str {
        &self.bio_labels[index]
    }

    pub fn bio_ids(&self, tags: &[String]) -> Result<Vec<usize>> {
        tags.iter()
            .map(|t| self.bio_index(t).ok_or_else(|| Error::UnknownLabel(t.clone())))
            .collect()
    }
}

impl TryFrom<Vec<String>> for LabelSet {
    type Error = Error;

    fn try_from(types: Vec<String>) -> Result<Self> {
        LabelSet::new(&types)
    }
}

impl From<LabelSet> for Vec<String> {
    fn from(labels: LabelSet) -> Self {
        labels.entity_types[1..].to_vec()
    }
}
