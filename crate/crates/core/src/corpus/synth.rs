//! Seeded synthetic NER corpora.
//!
//! Each entity type owns two small word lists: *head* words open an entity
//! and *tail* words continue it. Filler words come from a shared list. The
//! type of a word is therefore recoverable from the word itself and the
//! boundary between two adjacent entities of the same type is marked by the
//! second head word, which keeps the task learnable while still exercising
//! the adjacent-same-type case the BIO `B-` tag exists for.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, LabelSet, Sentence, MAX_ENTITY_WORDS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticType {
    pub name: String,
    pub head_words: usize,
    pub tail_words: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub entity_types: Vec<SyntheticType>,
    pub filler_words: usize,
    /// Inclusive `[min, max]` sentence length in words.
    pub sentence_len: [usize; 2],
    /// Inclusive `[min, max]` entity length in words.
    pub entity_len: [usize; 2],
    /// Inclusive `[min, max]` entities per sentence.
    pub entities_per_sentence: [usize; 2],
    pub sentences: usize,
    /// Probability that an entity directly follows one of the same type.
    #[serde(default)]
    pub adjacent_rate: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            entity_types: ["PER", "LOC", "ORG", "MISC"]
                .iter()
                .map(|n| SyntheticType {
                    name: n.to_string(),
                    head_words: 10,
                    tail_words: 10,
                })
                .collect(),
            filler_words: 60,
            sentence_len: [6, 14],
            entity_len: [1, 3],
            entities_per_sentence: [1, 3],
            sentences: 200,
            adjacent_rate: 0.15,
        }
    }
}

impl SyntheticSpec {
    /// Longer sentences (mean 44 words) for throughput measurements, with
    /// the default spec's entities per word.
    pub fn long_sentences() -> Self {
        SyntheticSpec {
            sentence_len: [34, 54],
            entities_per_sentence: [6, 12],
            ..SyntheticSpec::default()
        }
    }

    pub fn label_set(&self) -> Result<LabelSet> {
        let names: Vec<&str> = self.entity_types.iter().map(|t| t.name.as_str()).collect();
        LabelSet::new(&names)
    }

    pub fn validate(&self) -> Result<()> {
        let range_ok = |r: &[usize; 2]| r[0] <= r[1];
        if !range_ok(&self.sentence_len)
            || !range_ok(&self.entity_len)
            || !range_ok(&self.entities_per_sentence)
        {
            return Err(Error::Config("ranges must be [min, max] with min <= max".into()));
        }
        if self.entity_len[0] == 0 {
            return Err(Error::Config("entities need at least one word".into()));
        }
        if self.entity_len[1] > MAX_ENTITY_WORDS {
            return Err(Error::Config(format!(
                "entity length {} exceeds the maximum of {MAX_ENTITY_WORDS} words",
                self.entity_len[1]
            )));
        }
        if self.entities_per_sentence[1] > 0 && self.entity_types.is_empty() {
            return Err(Error::Config("entities requested but no entity types".into()));
        }
        if self.entities_per_sentence[0] * self.entity_len[0] > self.sentence_len[1] {
            return Err(Error::Config(
                "minimum entity mass does not fit the longest sentence".into(),
            ));
        }
        if self.filler_words == 0 && self.sentence_len[1] > 0 {
            return Err(Error::Config("filler vocabulary is empty".into()));
        }
        for t in &self.entity_types {
            if t.head_words == 0 || (t.tail_words == 0 && self.entity_len[1] > 1) {
                return Err(Error::Config(format!("type `{}` has an empty word list", t.name)));
            }
        }
        if !(0.0..=1.0).contains(&self.adjacent_rate) {
            return Err(Error::Config("adjacent_rate must lie in [0, 1]".into()));
        }
        self.label_set().map(|_| ())
    }
}

fn head_word(ty: &SyntheticType, k: usize) -> String {
    format!("{}_h{k}", ty.name.to_lowercase())
}

fn tail_word(ty: &SyntheticType, k: usize) -> String {
    format!("{}_t{k}", ty.name.to_lowercase())
}

/// Deterministic in `(spec, seed)`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sentences = Vec::with_capacity(spec.sentences);
    for _ in 0..spec.sentences {
        sentences.push(generate_sentence(spec, &mut rng)?);
    }
    Ok(Corpus::new(sentences))
}

fn generate_sentence(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<Sentence> {
    let target_len = rng.gen_range(spec.sentence_len[0]..=spec.sentence_len[1]);
    let wanted = rng.gen_range(spec.entities_per_sentence[0]..=spec.entities_per_sentence[1]);

    // (type index, length, glued to the previous entity)
    let mut entities: Vec<(usize, usize, bool)> = Vec::with_capacity(wanted);
    let mut mass = 0;
    for k in 0..wanted {
        let len = rng.gen_range(spec.entity_len[0]..=spec.entity_len[1]);
        if mass + len > target_len.max(spec.entities_per_sentence[0] * spec.entity_len[0]) {
            break;
        }
        let glued = k > 0 && rng.gen_bool(spec.adjacent_rate);
        let ty = if glued {
            entities[k - 1].0
        } else {
            rng.gen_range(0..spec.entity_types.len())
        };
        entities.push((ty, len, glued));
        mass += len;
    }

    // Spread filler over the gaps that are not glued.
    let filler = target_len.saturating_sub(mass);
    let mut gaps = vec![0usize; entities.len() + 1];
    let open: Vec<usize> = (0..gaps.len())
        .filter(|&g| g == 0 || g == entities.len() || !entities[g].2)
        .collect();
    for _ in 0..filler {
        gaps[*open.choose(rng).expect("first gap is always open")] += 1;
    }

    let mut words = Vec::with_capacity(target_len);
    let mut tags = Vec::with_capacity(target_len);
    let push_filler = |n: usize, rng: &mut ChaCha8Rng, words: &mut Vec<String>, tags: &mut Vec<String>| {
        for _ in 0..n {
            words.push(format!("w{}", rng.gen_range(0..spec.filler_words)));
            tags.push("O".to_string());
        }
    };
    for (k, &(ty, len, _)) in entities.iter().enumerate() {
        push_filler(gaps[k], rng, &mut words, &mut tags);
        let t = &spec.entity_types[ty];
        words.push(head_word(t, rng.gen_range(0..t.head_words)));
        tags.push(format!("B-{}", t.name));
        for _ in 1..len {
            words.push(tail_word(t, rng.gen_range(0..t.tail_words)));
            tags.push(format!("I-{}", t.name));
        }
    }
    push_filler(gaps[entities.len()], rng, &mut words, &mut tags);
    Sentence::new(words, tags)
}
