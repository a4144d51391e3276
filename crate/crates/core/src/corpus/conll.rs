//! CoNLL-style column files: one token per line, tag in the last
//! whitespace-separated column, blank lines between sentences.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::bio::{parse_tag, spans_to_tags, tags_to_spans, Tag};
use crate::corpus::{Corpus, LabelSet, Sentence};
use crate::error::{Error, Result};

const DOCSTART: &str = "-DOCSTART-";

pub fn load_conll(path: impl AsRef<Path>, labels: &LabelSet) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    read_conll(BufReader::new(file), path, labels)
}

/// Parse from any reader; `origin` only labels error messages.
pub fn read_conll<R: BufRead>(reader: R, origin: &Path, labels: &LabelSet) -> Result<Corpus> {
    let mut sentences = Vec::new();
    let mut words = Vec::new();
    let mut tags: Vec<String> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::file(origin, e))?;
        let lineno = idx + 1;
        let columns: Vec<&str> = line.split_whitespace().collect();
        if columns.is_empty() {
            flush(&mut sentences, &mut words, &mut tags)?;
            continue;
        }
        if columns[0] == DOCSTART {
            continue;
        }
        if columns.len() < 2 {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: lineno,
                message: format!("expected at least 2 columns, found {}", columns.len()),
            });
        }
        let tag = columns[columns.len() - 1];
        if labels.bio_index(tag).is_none() {
            return Err(Error::UnknownTag {
                path: origin.to_path_buf(),
                line: lineno,
                tag: tag.to_string(),
            });
        }
        words.push(columns[0].to_string());
        tags.push(tag.to_string());
    }
    flush(&mut sentences, &mut words, &mut tags)?;
    Ok(Corpus::new(sentences))
}

fn flush(out: &mut Vec<Sentence>, words: &mut Vec<String>, tags: &mut Vec<String>) -> Result<()> {
    if words.is_empty() {
        return Ok(());
    }
    // Normalize stray I- tags into their repaired B- form.
    let repaired = spans_to_tags(&tags_to_spans(tags), tags.len())?;
    out.push(Sentence::new(std::mem::take(words), repaired)?);
    tags.clear();
    Ok(())
}

pub fn write_conll<W: Write>(corpus: &Corpus, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for sentence in corpus {
        for (word, tag) in sentence.words.iter().zip(&sentence.tags) {
            writeln!(w, "{word} {tag}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Entity types mentioned in the tag column of the given files, sorted.
pub fn scan_entity_types<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<String>> {
    let mut types = BTreeSet::new();
    for path in paths {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::file(path, e))?;
            if let Some(tag) = line.split_whitespace().last() {
                if let Tag::Begin(t) | Tag::Inside(t) = parse_tag(tag) {
                    types.insert(t.to_string());
                }
            }
        }
    }
    Ok(types.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn labels() -> LabelSet {
        LabelSet::new(&["ORG", "PER", "LOC"]).unwrap()
    }

    fn parse(text: &str) -> Result<Corpus> {
        read_conll(Cursor::new(text), Path::new("mem"), &labels())
    }

    #[test]
    fn reads_one_sentence() {
        let corpus = parse("EU B-ORG\nrejects O\n. O\n\n").unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus.sentences[0].words, vec!["EU", "rejects", "."]);
        assert_eq!(corpus.sentences[0].tags, vec!["B-ORG", "O", "O"]);
    }

    #[test]
    fn middle_columns_are_ignored() {
        let corpus = parse("-DOCSTART- -X- O O\n\nEU NNP B-NP B-ORG\nx NN I-NP O\n").unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus.sentences[0].tags, vec!["B-ORG", "O"]);
    }

    #[test]
    fn empty_input() {
        assert!(parse("").unwrap().is_empty());
        assert!(parse("\n\n  \n").unwrap().is_empty());
    }

    #[test]
    fn errors_carry_location() {
        match parse("a O\nb\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match parse("a O\n\nb B-XYZ\n") {
            Err(Error::UnknownTag { line, tag, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(tag, "B-XYZ");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stray_inside_tags_are_repaired() {
        let corpus = parse("a I-PER\nb I-PER\nc I-LOC\n").unwrap();
        assert_eq!(corpus.sentences[0].tags, vec!["B-PER", "I-PER", "B-LOC"]);
    }

    #[test]
    fn write_then_read_is_identity() {
        let corpus = parse("EU B-ORG\nrejects O\n\nJohn B-PER\nSmith I-PER\nin O\nParis B-LOC\n").unwrap();
        let mut buf = Vec::new();
        write_conll(&corpus, &mut buf).unwrap();
        let again = parse(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(again, corpus);
    }

    #[test]
    fn scans_types_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.txt");
        std::fs::write(&path, "a B-PER\nb I-LOC\nc O\n").unwrap();
        assert_eq!(scan_entity_types(&[&path]).unwrap(), vec!["LOC", "PER"]);
        let missing = dir.path().join("nope.txt");
        let err = scan_entity_types(&[&missing]).unwrap_err();
        assert!(err.to_string().contains("nope.txt"));
    }
}
