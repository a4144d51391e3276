use crate::corpus::{EntitySpan, OUTSIDE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

/// Parse `O`, `B-X` or `I-X`. Anything else reads as outside.
pub fn parse_tag(tag: &str) -> Tag<'_> {
    match tag.split_once('-') {
        Some(("B", t)) if !t.is_empty() => Tag::Begin(t),
        Some(("I", t)) if !t.is_empty() => Tag::Inside(t),
        _ => Tag::Outside,
    }
}

/// Maximal entity segments of a BIO sequence.
///
/// An `I-X` that does not continue a segment of type `X` opens a new one, as
/// if it were `B-X`.
pub fn tags_to_spans<S: AsRef<str>>(tags: &[S]) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    for (i, tag) in tags.iter().enumerate() {
        match parse_tag(tag.as_ref()) {
            Tag::Outside => {
                if let Some((start, t)) = open.take() {
                    spans.push(EntitySpan::new(start, i - 1, t));
                }
            }
            Tag::Begin(t) => {
                if let Some((start, prev)) = open.take() {
                    spans.push(EntitySpan::new(start, i - 1, prev));
                }
                open = Some((i, t));
            }
            Tag::Inside(t) => match open {
                Some((_, prev)) if prev == t => {}
                _ => {
                    if let Some((start, prev)) = open.take() {
                        spans.push(EntitySpan::new(start, i - 1, prev));
                    }
                    open = Some((i, t));
                }
            },
        }
    }
    if let Some((start, t)) = open {
        spans.push(EntitySpan::new(start, tags.len() - 1, t));
    }
    spans
}

/// BIO tags of length `len` for non-overlapping `spans`.
pub fn spans_to_tags(spans: &[EntitySpan], len: usize) -> Result<Vec<String>> {
    let mut tags = vec![OUTSIDE.to_string(); len];
    let mut sorted: Vec<&EntitySpan> = spans.iter().collect();
    sorted.sort_by_key(|s| (s.start, s.end));
    for (k, span) in sorted.iter().enumerate() {
        if span.start > span.end || span.end >= len {
            return Err(Error::SpanOutOfRange {
                start: span.start,
                end: span.end,
                len,
            });
        }
        if let Some(prev) = k.checked_sub(1).map(|p| sorted[p]) {
            if prev.overlaps(span) {
                return Err(Error::OverlappingSpans {
                    a_start: prev.start,
                    a_end: prev.end,
                    b_start: span.start,
                    b_end: span.end,
                });
            }
        }
        tags[span.start] = format!("B-{}", span.entity_type);
        for tag in &mut tags[span.start + 1..=span.end] {
            *tag = format!("I-{}", span.entity_type);
        }
    }
    Ok(tags)
}
