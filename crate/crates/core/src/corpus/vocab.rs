use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;

const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Word-level vocabulary with dense ids; `PAD` and `UNK` are ids 0 and 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    words: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_words(words: Vec<String>) -> Result<Self> {
        if words.len() < 2 || words[PAD] != PAD_TOKEN || words[UNK] != UNK_TOKEN {
            return Err(Error::Checkpoint(
                "vocabulary must start with the pad and unk tokens".into(),
            ));
        }
        let mut ids = HashMap::with_capacity(words.len());
        for (id, w) in words.iter().enumerate() {
            if ids.insert(w.clone(), id).is_some() {
                return Err(Error::Checkpoint(format!("duplicate vocabulary entry `{w}`")));
            }
        }
        Ok(Vocabulary { words, ids })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> usize {
        self.ids.get(word).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.ids.contains_key(word)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        words.iter().map(|w| self.id(w.as_ref())).collect()
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(words: Vec<String>) -> Result<Self> {
        Vocabulary::from_words(words)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.words
    }
}

/// Every word seen at least `min_freq` times gets an id, in lexicographic order.
pub fn build_vocab(corpus: &Corpus, min_freq: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for sentence in corpus {
        for w in &sentence.words {
            *counts.entry(w.as_str()).or_default() += 1;
        }
    }
    let mut words = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    words.extend(
        counts
            .into_iter()
            .filter(|&(w, c)| c >= min_freq.max(1) && w != PAD_TOKEN && w != UNK_TOKEN)
            .map(|(w, _)| w.to_string()),
    );
    Vocabulary::from_words(words)
}
